use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::streams;

use super::session::WEEK_SECONDS;

/// Knobs for the synthetic corpus generator.
///
/// The generator plants both signals the model is built to exploit: watch
/// choices copy from friends' previous-week sessions (social signal) and
/// follow dependency edges of packages already in the session (dependency
/// signal). The remainder comes from the developer's current topic cluster
/// plus uniform noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub developers: usize,
    pub packages: usize,
    pub topics: usize,
    pub weeks: usize,
    pub seed: u64,
    /// Follow edges drawn per developer (preferentially same-topic).
    pub avg_friends: usize,
    /// Probability a developer is active in a given week.
    pub session_rate: f64,
    pub min_items: usize,
    pub max_items: usize,
    /// Probability an item copies from a friend's previous-week session.
    pub p_social: f64,
    /// Probability an item follows a dependency of an in-session package.
    pub p_dep: f64,
    /// Probability of a uniformly random item.
    pub p_noise: f64,
    /// Per-week probability a developer's topic jumps to a random one.
    pub topic_drift: f64,
    /// Within-cluster popularity exponent for topic draws: item at
    /// popularity rank r is drawn with weight 1/(1+r)^skew. Zero keeps
    /// the draw uniform.
    pub popularity_skew: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            developers: 30,
            packages: 40,
            topics: 3,
            weeks: 12,
            seed: 0,
            avg_friends: 4,
            session_rate: 0.85,
            min_items: 3,
            max_items: 8,
            p_social: 0.3,
            p_dep: 0.3,
            p_noise: 0.05,
            topic_drift: 0.1,
            popularity_skew: 0.0,
        }
    }
}

/// Generated corpus in the on-disk exchange format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthData {
    pub events: String,
    pub social: String,
    pub dependency: String,
}

impl SynthData {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, content) in [
            ("events.tsv", &self.events),
            ("social.tsv", &self.social),
            ("dependency.tsv", &self.dependency),
        ] {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

fn dev_name(d: usize) -> String {
    format!("d{d:04}")
}

fn pkg_name(p: usize) -> String {
    format!("p{p:04}")
}

/// Draw an index from `cluster`, either uniformly (skew 0) or weighted by
/// 1/(1+rank)^skew where rank is the position within the cluster.
fn pick_cluster_item(cluster: &[usize], skew: f64, rng: &mut impl Rng) -> usize {
    if skew == 0.0 {
        return *cluster.choose(rng).unwrap();
    }
    let weights: Vec<f64> = (0..cluster.len())
        .map(|r| 1.0 / (1.0 + r as f64).powf(skew))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut roll = rng.random::<f64>() * total;
    for (item, w) in cluster.iter().zip(&weights) {
        roll -= w;
        if roll <= 0.0 {
            return *item;
        }
    }
    *cluster.last().unwrap()
}

pub fn generate(config: &SynthConfig) -> SynthData {
    assert!(config.developers >= 1 && config.packages >= 1 && config.weeks >= 1);
    assert!(config.topics >= 1 && config.topics <= config.packages);
    assert!(config.min_items >= 1 && config.min_items <= config.max_items);
    assert!(config.p_social + config.p_dep + config.p_noise <= 1.0);
    assert!(config.popularity_skew >= 0.0);
    let mut rng = streams::stream_rng(config.seed, streams::SYNTH);

    // Contiguous package blocks per topic.
    let topic_of = |p: usize| p * config.topics / config.packages;
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); config.topics];
    for p in 0..config.packages {
        clusters[topic_of(p)].push(p);
    }

    // Intra-cluster dependency edges, 1-3 per package.
    let mut deps: Vec<Vec<usize>> = vec![Vec::new(); config.packages];
    for p in 0..config.packages {
        let pool: Vec<usize> = clusters[topic_of(p)]
            .iter()
            .copied()
            .filter(|&q| q != p)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let want = rng.random_range(1..=3usize.min(pool.len()));
        for _ in 0..want {
            let q = *pool.choose(&mut rng).unwrap();
            if !deps[p].contains(&q) {
                deps[p].push(q);
            }
        }
    }

    // Initial topics and homophilous follow edges.
    let mut topic: Vec<usize> = (0..config.developers)
        .map(|_| rng.random_range(0..config.topics))
        .collect();
    let mut follows: Vec<Vec<usize>> = vec![Vec::new(); config.developers];
    if config.developers > 1 {
        for u in 0..config.developers {
            let mut attempts = 0;
            while follows[u].len() < config.avg_friends && attempts < config.avg_friends * 8 {
                attempts += 1;
                let v = rng.random_range(0..config.developers);
                if v == u || follows[u].contains(&v) {
                    continue;
                }
                let accept = topic[v] == topic[u] || rng.random::<f64>() < 0.25;
                if accept {
                    follows[u].push(v);
                }
            }
            follows[u].sort_unstable();
        }
    }

    // Weekly sessions.
    let mut events: Vec<(usize, usize, u64)> = Vec::new();
    let mut prev_week: Vec<Vec<usize>> = vec![Vec::new(); config.developers];
    for w in 0..config.weeks {
        let mut this_week: Vec<Vec<usize>> = vec![Vec::new(); config.developers];
        for u in 0..config.developers {
            if rng.random::<f64>() < config.topic_drift {
                topic[u] = rng.random_range(0..config.topics);
            }
            if rng.random::<f64>() >= config.session_rate {
                continue;
            }
            let want = rng.random_range(config.min_items..=config.max_items);
            let mut items: Vec<usize> = Vec::with_capacity(want);
            for _ in 0..want {
                let mut candidate = None;
                let roll: f64 = rng.random();
                if roll < config.p_social {
                    if let Some(&f) = follows[u].choose(&mut rng) {
                        if let Some(&c) = prev_week[f].choose(&mut rng) {
                            candidate = Some(c);
                        }
                    }
                } else if roll < config.p_social + config.p_dep && !items.is_empty() {
                    let base = *items.choose(&mut rng).unwrap();
                    if let Some(&c) = deps[base].choose(&mut rng) {
                        candidate = Some(c);
                    }
                } else if roll < config.p_social + config.p_dep + config.p_noise {
                    candidate = Some(rng.random_range(0..config.packages));
                }
                let mut c = candidate.unwrap_or_else(|| {
                    pick_cluster_item(&clusters[topic[u]], config.popularity_skew, &mut rng)
                });
                let mut retries = 0;
                while items.contains(&c) && retries < 4 {
                    c = pick_cluster_item(&clusters[topic[u]], config.popularity_skew, &mut rng);
                    retries += 1;
                }
                if !items.contains(&c) {
                    items.push(c);
                }
            }
            for (pos, &p) in items.iter().enumerate() {
                let ts = w as u64 * WEEK_SECONDS + pos as u64 * 3600;
                events.push((u, p, ts));
            }
            this_week[u] = items;
        }
        prev_week = this_week;
    }

    let mut events_text = String::new();
    for (u, p, ts) in &events {
        writeln!(events_text, "{}\t{}\t{}", dev_name(*u), pkg_name(*p), ts).unwrap();
    }
    let mut social_text = String::new();
    for (u, vs) in follows.iter().enumerate() {
        for &v in vs {
            writeln!(social_text, "{}\t{}", dev_name(u), dev_name(v)).unwrap();
        }
    }
    let mut dependency_text = String::new();
    for (p, qs) in deps.iter().enumerate() {
        let mut sorted = qs.clone();
        sorted.sort_unstable();
        for q in sorted {
            writeln!(dependency_text, "{}\t{}", pkg_name(p), pkg_name(q)).unwrap();
        }
    }

    SynthData {
        events: events_text,
        social: social_text,
        dependency: dependency_text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::corpus::ingest_text;
    use crate::data::session::{filter_corpus, segment_sessions};

    fn parse(data: &SynthData) -> crate::data::corpus::RawCorpus {
        ingest_text(
            (&data.events, Path::new("<events>")),
            (&data.social, Path::new("<social>")),
            (&data.dependency, Path::new("<dependency>")),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = SynthConfig::default();
        assert_eq!(generate(&config), generate(&config));
        let other = SynthConfig {
            seed: 1,
            ..config.clone()
        };
        assert_ne!(generate(&config), generate(&other));
    }

    #[test]
    fn single_topic_keeps_dependencies_in_one_cluster() {
        let config = SynthConfig {
            topics: 1,
            packages: 10,
            developers: 8,
            weeks: 4,
            ..SynthConfig::default()
        };
        let data = generate(&config);
        for line in data.dependency.lines() {
            let mut it = line.split('\t');
            let (a, b) = (it.next().unwrap(), it.next().unwrap());
            // All packages belong to the sole cluster; ids must be in range.
            for name in [a, b] {
                let id: usize = name[1..].parse().unwrap();
                assert!(id < 10);
            }
        }
        assert!(!data.dependency.is_empty());
    }

    #[test]
    fn generated_corpus_survives_filtering() {
        let config = SynthConfig::default();
        let raw = parse(&generate(&config));
        assert!(!raw.events.is_empty());
        let sessions = segment_sessions(&raw.events, 1);
        let corpus = filter_corpus(&raw, &sessions, 1, 1, 1);
        assert!(corpus.num_developers() >= 10, "{}", corpus.num_developers());
        assert!(corpus.num_packages() >= 10);
        assert!(corpus.sessions.len() >= 30);
        assert!(corpus.social.has_edges());
        assert!(corpus.dependency.has_edges());
        // Multiple distinct weeks must survive so a split can reserve some.
        let steps: std::collections::HashSet<u64> =
            corpus.sessions.iter().map(|s| s.time_step).collect();
        assert!(steps.len() >= 6);
    }

    #[test]
    fn popularity_skew_concentrates_topic_draws() {
        // Pure topic draws (no social/dep/noise) make every event a cluster
        // draw, so the item histogram directly reflects the draw weights.
        // Short sessions keep the without-replacement retry from flattening
        // the histogram.
        let base = SynthConfig {
            topics: 1,
            packages: 10,
            developers: 20,
            weeks: 8,
            min_items: 2,
            max_items: 4,
            p_social: 0.0,
            p_dep: 0.0,
            p_noise: 0.0,
            ..SynthConfig::default()
        };
        let histogram = |cfg: &SynthConfig| {
            let mut counts = vec![0usize; cfg.packages];
            for line in generate(cfg).events.lines() {
                let pkg: usize = line.split('\t').nth(1).unwrap()[1..].parse().unwrap();
                counts[pkg] += 1;
            }
            counts
        };
        let uniform = histogram(&base);
        let skewed = histogram(&SynthConfig {
            popularity_skew: 1.5,
            ..base.clone()
        });
        let share = |c: &[usize]| {
            let total: usize = c.iter().sum();
            c[..3].iter().sum::<usize>() as f64 / total as f64
        };
        // With weights 1/(1+r)^1.5 over ten items the first three hold ~66%
        // of the mass versus 30% under the uniform draw.
        assert!(share(&uniform) < 0.4, "uniform top-3 share {}", share(&uniform));
        assert!(share(&skewed) > 0.55, "skewed top-3 share {}", share(&skewed));
    }

    #[test]
    fn timestamps_stay_inside_their_week() {
        let data = generate(&SynthConfig::default());
        for line in data.events.lines() {
            let ts: u64 = line.rsplit('\t').next().unwrap().parse().unwrap();
            let within = ts % WEEK_SECONDS;
            assert!(within < 30 * 3600);
        }
    }
}
