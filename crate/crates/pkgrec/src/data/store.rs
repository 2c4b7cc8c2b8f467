use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::corpus::Interner;
use super::graph::Graph;
use super::session::{Corpus, DatasetSplit, Session, SplitLabel};

/// File names inside a prepared corpus directory.
pub const DEVELOPERS_FILE: &str = "developers.tsv";
pub const PACKAGES_FILE: &str = "packages.tsv";
pub const SESSIONS_FILE: &str = "sessions.tsv";
pub const SOCIAL_FILE: &str = "social.tsv";
pub const DEPENDENCY_FILE: &str = "dependency.tsv";
pub const SPLIT_FILE: &str = "split.tsv";
pub const SUMMARY_FILE: &str = "summary.txt";

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| Error::io(path.clone(), e))
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path.clone(), e))
}

fn edges_text(graph: &Graph) -> String {
    let mut out = String::new();
    for (from, to) in graph.edges() {
        writeln!(out, "{from}\t{to}").unwrap();
    }
    out
}

/// Serialize a prepared corpus and its split assignment into `dir`.
/// Everything is line-oriented text keyed by the dense internal ids; the two
/// id tables map those back to the original strings.
pub fn save(dir: &Path, corpus: &Corpus, split: &DatasetSplit) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut names = String::new();
    for name in corpus.developers.names() {
        names.push_str(name);
        names.push('\n');
    }
    write_file(dir, DEVELOPERS_FILE, &names)?;

    names.clear();
    for name in corpus.packages.names() {
        names.push_str(name);
        names.push('\n');
    }
    write_file(dir, PACKAGES_FILE, &names)?;

    let mut sessions = String::new();
    for s in &corpus.sessions {
        let items: Vec<String> = s.items.iter().map(|i| i.to_string()).collect();
        writeln!(sessions, "{}\t{}\t{}", s.developer, s.time_step, items.join(",")).unwrap();
    }
    write_file(dir, SESSIONS_FILE, &sessions)?;

    write_file(dir, SOCIAL_FILE, &edges_text(&corpus.social))?;
    write_file(dir, DEPENDENCY_FILE, &edges_text(&corpus.dependency))?;

    let mut assignments = String::new();
    for (dev, t, label) in &split.assignments {
        writeln!(assignments, "{dev}\t{t}\t{}", label.as_str()).unwrap();
    }
    write_file(dir, SPLIT_FILE, &assignments)?;

    let stats = corpus.stats();
    let mut summary = String::new();
    writeln!(summary, "developers\t{}", stats.developers).unwrap();
    writeln!(summary, "packages\t{}", stats.packages).unwrap();
    writeln!(summary, "sessions\t{}", stats.sessions).unwrap();
    writeln!(summary, "events\t{}", stats.events).unwrap();
    writeln!(summary, "social_edges\t{}", stats.social_edges).unwrap();
    writeln!(summary, "dependency_edges\t{}", stats.dependency_edges).unwrap();
    writeln!(summary, "avg_session_len\t{:.4}", stats.avg_session_len).unwrap();
    writeln!(summary, "avg_friends\t{:.4}", stats.avg_friends).unwrap();
    writeln!(summary, "avg_dependencies\t{:.4}", stats.avg_dependencies).unwrap();
    writeln!(summary, "train_sessions\t{}", split.train.len()).unwrap();
    writeln!(summary, "valid_sessions\t{}", split.valid.len()).unwrap();
    writeln!(summary, "test_sessions\t{}", split.test.len()).unwrap();
    writeln!(summary, "excluded_developers\t{}", split.excluded_developers.len()).unwrap();
    write_file(dir, SUMMARY_FILE, &summary)
}

fn parse_edges(dir: &Path, name: &str, num_nodes: usize) -> Result<Graph> {
    let text = read_file(dir, name)?;
    let path = dir.join(name);
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split('\t');
        let bad = || Error::Malformed {
            path: path.clone(),
            line: lineno + 1,
            reason: "expected `from<TAB>to` with integer ids".into(),
        };
        let from: u32 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let to: u32 = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if from as usize >= num_nodes || to as usize >= num_nodes {
            return Err(Error::Malformed {
                path: path.clone(),
                line: lineno + 1,
                reason: format!("node id out of range 0..{num_nodes}"),
            });
        }
        edges.push((from, to));
    }
    Ok(Graph::from_edges(num_nodes, &edges))
}

/// Load a directory written by [`save`].
pub fn load(dir: &Path) -> Result<(Corpus, DatasetSplit)> {
    let mut developers = Interner::new();
    for name in read_file(dir, DEVELOPERS_FILE)?.lines() {
        developers.intern(name);
    }
    let mut packages = Interner::new();
    for name in read_file(dir, PACKAGES_FILE)?.lines() {
        packages.intern(name);
    }

    let sessions_path = dir.join(SESSIONS_FILE);
    let mut sessions: Vec<Session> = Vec::new();
    for (lineno, line) in read_file(dir, SESSIONS_FILE)?.lines().enumerate() {
        let bad = |reason: &str| Error::Malformed {
            path: sessions_path.clone(),
            line: lineno + 1,
            reason: reason.into(),
        };
        let mut it = line.split('\t');
        let (dev, t, items) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(d), Some(t), Some(i), None) => (d, t, i),
            _ => return Err(bad("expected `developer<TAB>time_step<TAB>items`")),
        };
        let developer: u32 = dev.parse().map_err(|_| bad("bad developer id"))?;
        let time_step: u64 = t.parse().map_err(|_| bad("bad time step"))?;
        let items: Vec<u32> = items
            .split(',')
            .map(|i| i.parse().map_err(|_| bad("bad item id")))
            .collect::<Result<_>>()?;
        if developer as usize >= developers.len() {
            return Err(bad("developer id out of range"));
        }
        if items.iter().any(|&i| i as usize >= packages.len()) {
            return Err(bad("item id out of range"));
        }
        sessions.push(Session {
            developer,
            time_step,
            items,
        });
    }

    let social = parse_edges(dir, SOCIAL_FILE, developers.len())?;
    let dependency = parse_edges(dir, DEPENDENCY_FILE, packages.len())?;

    let split_path = dir.join(SPLIT_FILE);
    let mut split = DatasetSplit::default();
    let split_text = read_file(dir, SPLIT_FILE)?;
    let mut lines = split_text.lines().enumerate().peekable();
    for s in &sessions {
        let (lineno, line) = lines.next().ok_or_else(|| Error::Malformed {
            path: split_path.clone(),
            line: sessions.len(),
            reason: "fewer split rows than sessions".into(),
        })?;
        let bad = |reason: String| Error::Malformed {
            path: split_path.clone(),
            line: lineno + 1,
            reason,
        };
        let mut it = line.split('\t');
        let (dev, t, label) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(d), Some(t), Some(l), None) => (d, t, l),
            _ => return Err(bad("expected `developer<TAB>time_step<TAB>label`".into())),
        };
        let dev: u32 = dev.parse().map_err(|_| bad("bad developer id".into()))?;
        let t: u64 = t.parse().map_err(|_| bad("bad time step".into()))?;
        if dev != s.developer || t != s.time_step {
            return Err(bad(format!(
                "split row ({dev}, {t}) does not match session ({}, {})",
                s.developer, s.time_step
            )));
        }
        let label = SplitLabel::parse(label)
            .ok_or_else(|| bad(format!("unknown split label {label:?}")))?;
        split.assignments.push((dev, t, label));
        match label {
            SplitLabel::Train => split.train.push(s.clone()),
            SplitLabel::Valid => split.valid.push(s.clone()),
            SplitLabel::Test => split.test.push(s.clone()),
            SplitLabel::Dropped => {}
            SplitLabel::Excluded => {
                if split.excluded_developers.last() != Some(&dev) {
                    split.excluded_developers.push(dev);
                }
            }
        }
    }
    if lines.peek().is_some() {
        return Err(Error::Malformed {
            path: split_path,
            line: sessions.len() + 1,
            reason: "more split rows than sessions".into(),
        });
    }

    Ok((
        Corpus {
            developers,
            packages,
            sessions,
            social,
            dependency,
        },
        split,
    ))
}
