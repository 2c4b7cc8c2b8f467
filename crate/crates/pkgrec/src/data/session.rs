use std::collections::HashSet;

use rand::Rng;

use crate::error::{Error, Result};
use crate::streams;

use super::corpus::{Event, Interner, RawCorpus};
use super::graph::Graph;

pub const WEEK_SECONDS: u64 = 604_800;
pub const MIN_SESSION_LEN: usize = 2;
pub const MAX_SESSION_LEN: usize = 30;

/// One developer's ordered package interactions within one time bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub developer: u32,
    pub time_step: u64,
    pub items: Vec<u32>,
}

/// Bucket events into fixed-lifespan sessions. The bucket index is
/// `timestamp / (week * lifespan_weeks)` measured from the Unix epoch.
/// Within a session, items keep timestamp order; ties keep input order.
pub fn segment_sessions(events: &[Event], lifespan_weeks: u64) -> Vec<Session> {
    assert!(lifespan_weeks >= 1, "lifespan must be positive");
    let bucket = WEEK_SECONDS * lifespan_weeks;
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].developer, events[i].timestamp));

    let mut sessions: Vec<Session> = Vec::new();
    for &i in &order {
        let e = events[i];
        let t = e.timestamp / bucket;
        match sessions.last_mut() {
            Some(s) if s.developer == e.developer && s.time_step == t => s.items.push(e.package),
            _ => sessions.push(Session {
                developer: e.developer,
                time_step: t,
                items: vec![e.package],
            }),
        }
    }
    sessions
}

/// A cleaned, densely indexed corpus: the unit every later stage consumes.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub developers: Interner,
    pub packages: Interner,
    /// Sorted by (developer, time_step); time steps are unique per developer.
    pub sessions: Vec<Session>,
    /// follower → followees
    pub social: Graph,
    /// package → dependencies
    pub dependency: Graph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub developers: usize,
    pub packages: usize,
    pub sessions: usize,
    pub events: usize,
    pub social_edges: usize,
    pub dependency_edges: usize,
    pub avg_session_len: f64,
    pub avg_friends: f64,
    pub avg_dependencies: f64,
}

impl Corpus {
    pub fn num_developers(&self) -> usize {
        self.developers.len()
    }

    pub fn num_packages(&self) -> usize {
        self.packages.len()
    }

    pub fn stats(&self) -> CorpusStats {
        let events: usize = self.sessions.iter().map(|s| s.items.len()).sum();
        let devs = self.num_developers().max(1);
        let pkgs = self.num_packages().max(1);
        CorpusStats {
            developers: self.num_developers(),
            packages: self.num_packages(),
            sessions: self.sessions.len(),
            events,
            social_edges: self.social.num_edges(),
            dependency_edges: self.dependency.num_edges(),
            avg_session_len: events as f64 / self.sessions.len().max(1) as f64,
            avg_friends: self.social.num_edges() as f64 / devs as f64,
            avg_dependencies: self.dependency.num_edges() as f64 / pkgs as f64,
        }
    }
}

/// Thresholded cleanup, run to a fixpoint.
///
/// Per pass: developers need ≥ `min_friends` outgoing follows, ≥
/// `min_followers` incoming follows, and ≥ 1 surviving session; packages need
/// ≥ `min_watchers` distinct watching developers; sessions keep only
/// surviving packages and must stay within [2, 30] items. Removals cascade
/// (a removed package can shrink a session below 2, which can strip a
/// developer), so passes repeat until nothing changes. Survivors are
/// re-indexed densely, preserving relative id order.
pub fn filter_corpus(
    raw: &RawCorpus,
    sessions: &[Session],
    min_friends: usize,
    min_followers: usize,
    min_watchers: usize,
) -> Corpus {
    let num_devs = raw.developers.len();
    let num_pkgs = raw.packages.len();
    // Dedup edges / drop self-loops once up front so counts are honest.
    let social = Graph::from_edges(num_devs, &raw.social_edges);
    let dependency = Graph::from_edges(num_pkgs, &raw.dependency_edges);

    let mut dev_keep = vec![true; num_devs];
    let mut pkg_keep = vec![true; num_pkgs];

    let filtered_sessions = |dev_keep: &[bool], pkg_keep: &[bool]| -> Vec<Session> {
        sessions
            .iter()
            .filter(|s| dev_keep[s.developer as usize])
            .filter_map(|s| {
                let items: Vec<u32> = s
                    .items
                    .iter()
                    .copied()
                    .filter(|&p| pkg_keep[p as usize])
                    .collect();
                ((MIN_SESSION_LEN..=MAX_SESSION_LEN).contains(&items.len())).then(|| Session {
                    developer: s.developer,
                    time_step: s.time_step,
                    items,
                })
            })
            .collect()
    };

    loop {
        let current = filtered_sessions(&dev_keep, &pkg_keep);

        let mut out_deg = vec![0usize; num_devs];
        let mut in_deg = vec![0usize; num_devs];
        for from in 0..num_devs {
            if !dev_keep[from] {
                continue;
            }
            for &to in social.neighbors(from as u32) {
                if dev_keep[to as usize] {
                    out_deg[from] += 1;
                    in_deg[to as usize] += 1;
                }
            }
        }

        let mut session_count = vec![0usize; num_devs];
        let mut watchers: Vec<HashSet<u32>> = vec![HashSet::new(); num_pkgs];
        for s in &current {
            session_count[s.developer as usize] += 1;
            for &p in &s.items {
                watchers[p as usize].insert(s.developer);
            }
        }

        let next_dev: Vec<bool> = (0..num_devs)
            .map(|d| {
                dev_keep[d]
                    && out_deg[d] >= min_friends
                    && in_deg[d] >= min_followers
                    && session_count[d] >= 1
            })
            .collect();
        let next_pkg: Vec<bool> = (0..num_pkgs)
            .map(|p| pkg_keep[p] && watchers[p].len() >= min_watchers)
            .collect();

        if next_dev == dev_keep && next_pkg == pkg_keep {
            break;
        }
        dev_keep = next_dev;
        pkg_keep = next_pkg;
    }

    let (developers, dev_map) = raw.developers.compact(&dev_keep);
    let (packages, pkg_map) = raw.packages.compact(&pkg_keep);

    let mut kept_sessions = filtered_sessions(&dev_keep, &pkg_keep);
    for s in &mut kept_sessions {
        s.developer = dev_map[s.developer as usize].unwrap();
        for item in &mut s.items {
            *item = pkg_map[*item as usize].unwrap();
        }
    }
    kept_sessions.sort_by_key(|s| (s.developer, s.time_step));

    let social_edges: Vec<(u32, u32)> = social
        .edges()
        .into_iter()
        .filter_map(|(f, t)| Some((dev_map[f as usize]?, dev_map[t as usize]?)))
        .collect();
    let dependency_edges: Vec<(u32, u32)> = dependency
        .edges()
        .into_iter()
        .filter_map(|(f, t)| Some((pkg_map[f as usize]?, pkg_map[t as usize]?)))
        .collect();

    Corpus {
        social: Graph::from_edges(developers.len(), &social_edges),
        dependency: Graph::from_edges(packages.len(), &dependency_edges),
        developers,
        packages,
        sessions: kept_sessions,
    }
}

/// Merge adjacent sessions into wider buckets (new step = old step /
/// `factor`), re-applying the session length bounds. Used by the lifespan
/// sweep instead of re-ingesting raw events.
pub fn merge_lifespan(sessions: &[Session], factor: u64) -> Vec<Session> {
    assert!(factor >= 1, "merge factor must be positive");
    let mut merged: Vec<Session> = Vec::new();
    for s in sessions {
        let t = s.time_step / factor;
        match merged.last_mut() {
            Some(m) if m.developer == s.developer && m.time_step == t => {
                m.items.extend_from_slice(&s.items)
            }
            _ => merged.push(Session {
                developer: s.developer,
                time_step: t,
                items: s.items.clone(),
            }),
        }
    }
    merged.retain(|s| (MIN_SESSION_LEN..=MAX_SESSION_LEN).contains(&s.items.len()));
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
    /// Validation/test candidate dropped because it contains a package that
    /// never occurs in train.
    Dropped,
    /// Belongs to a developer left with no train sessions.
    Excluded,
}

impl SplitLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Valid => "valid",
            SplitLabel::Test => "test",
            SplitLabel::Dropped => "dropped",
            SplitLabel::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Option<SplitLabel> {
        Some(match s {
            "train" => SplitLabel::Train,
            "valid" => SplitLabel::Valid,
            "test" => SplitLabel::Test,
            "dropped" => SplitLabel::Dropped,
            "excluded" => SplitLabel::Excluded,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Session>,
    pub valid: Vec<Session>,
    pub test: Vec<Session>,
    /// Developers with no train sessions, omitted from all three lists.
    pub excluded_developers: Vec<u32>,
    /// One entry per corpus session, in (developer, time_step) order.
    pub assignments: Vec<(u32, u64, SplitLabel)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Width of the trailing window pooled for validation/test.
    pub reserve_weeks: u64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            reserve_weeks: 104,
            valid_frac: 0.5,
            test_frac: 0.5,
            seed: 0,
        }
    }
}

/// Assign sessions to train/validation/test.
///
/// Sessions inside the trailing `reserve_weeks` window (measured from the
/// latest time step in the corpus) form a pool; each pooled session draws
/// once from a seeded stream and lands in validation with probability
/// `valid_frac`, test with `test_frac`, and train with the remainder. All
/// earlier sessions are train. Validation/test sessions mentioning a package
/// absent from train are dropped, and developers left without a train
/// session are excluded entirely.
pub fn split(sessions: &[Session], config: &SplitConfig) -> Result<DatasetSplit> {
    let (vf, tf) = (config.valid_frac, config.test_frac);
    if !(0.0..=1.0).contains(&vf) || !(0.0..=1.0).contains(&tf) || vf + tf > 1.0 {
        return Err(Error::data(format!(
            "split fractions must lie in [0,1] and sum to at most 1 (got valid {vf}, test {tf})"
        )));
    }
    let mut result = DatasetSplit::default();
    let t_max = match sessions.iter().map(|s| s.time_step).max() {
        Some(t) => t,
        None => return Ok(result),
    };
    let in_window = |t: u64| t + config.reserve_weeks > t_max;

    let mut rng = streams::stream_rng(config.seed, streams::SPLIT);
    // Sessions arrive sorted by (developer, time_step); one uniform draw per
    // pooled session keeps the assignment independent of everything else.
    let mut labels: Vec<SplitLabel> = sessions
        .iter()
        .map(|s| {
            if in_window(s.time_step) {
                let u: f64 = rng.random();
                if u < vf {
                    SplitLabel::Valid
                } else if u < vf + tf {
                    SplitLabel::Test
                } else {
                    SplitLabel::Train
                }
            } else {
                SplitLabel::Train
            }
        })
        .collect();

    let mut train_packages: HashSet<u32> = HashSet::new();
    for (s, l) in sessions.iter().zip(&labels) {
        if *l == SplitLabel::Train {
            train_packages.extend(s.items.iter().copied());
        }
    }
    for (s, l) in sessions.iter().zip(labels.iter_mut()) {
        if matches!(l, SplitLabel::Valid | SplitLabel::Test)
            && !s.items.iter().all(|p| train_packages.contains(p))
        {
            *l = SplitLabel::Dropped;
        }
    }

    let mut has_train: HashSet<u32> = HashSet::new();
    for (s, l) in sessions.iter().zip(&labels) {
        if *l == SplitLabel::Train {
            has_train.insert(s.developer);
        }
    }
    let mut excluded: Vec<u32> = Vec::new();
    for (s, l) in sessions.iter().zip(labels.iter_mut()) {
        if !has_train.contains(&s.developer) {
            if excluded.last() != Some(&s.developer) {
                excluded.push(s.developer);
            }
            *l = SplitLabel::Excluded;
        }
    }

    for (s, l) in sessions.iter().zip(&labels) {
        result.assignments.push((s.developer, s.time_step, *l));
        match l {
            SplitLabel::Train => result.train.push(s.clone()),
            SplitLabel::Valid => result.valid.push(s.clone()),
            SplitLabel::Test => result.test.push(s.clone()),
            SplitLabel::Dropped | SplitLabel::Excluded => {}
        }
    }
    result.excluded_developers = excluded;
    Ok(result)
}

/// Per-developer session lookup by time step.
pub struct SessionIndex<'a> {
    per_dev: Vec<Vec<&'a Session>>,
}

impl<'a> SessionIndex<'a> {
    pub fn build(sessions: &'a [Session], num_developers: usize) -> Self {
        let mut per_dev: Vec<Vec<&'a Session>> = vec![Vec::new(); num_developers];
        for s in sessions {
            per_dev[s.developer as usize].push(s);
        }
        for list in &mut per_dev {
            list.sort_by_key(|s| s.time_step);
        }
        SessionIndex { per_dev }
    }

    pub fn sessions_of(&self, developer: u32) -> &[&'a Session] {
        &self.per_dev[developer as usize]
    }

    /// Most recent session of `developer` strictly before `time_step`. The
    /// exact previous bucket wins when present; otherwise this falls back to
    /// the latest earlier one.
    pub fn latest_before(&self, developer: u32, time_step: u64) -> Option<&'a Session> {
        let list = &self.per_dev[developer as usize];
        let idx = list.partition_point(|s| s.time_step < time_step);
        if idx == 0 {
            None
        } else {
            Some(list[idx - 1])
        }
    }

    /// First (earliest) time step of a developer, if any.
    pub fn first_step(&self, developer: u32) -> Option<u64> {
        self.per_dev[developer as usize].first().map(|s| s.time_step)
    }
}
