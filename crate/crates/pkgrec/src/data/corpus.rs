use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense id assignment for opaque string ids, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn new() -> Self {
        Interner::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// New interner over the ids selected by `keep`, preserving relative
    /// order. Returns the interner and a map old id → new id.
    pub fn compact(&self, keep: &[bool]) -> (Interner, Vec<Option<u32>>) {
        assert_eq!(keep.len(), self.names.len());
        let mut out = Interner::new();
        let mut remap = vec![None; keep.len()];
        for (old, name) in self.names.iter().enumerate() {
            if keep[old] {
                remap[old] = Some(out.intern(name));
            }
        }
        (out, remap)
    }
}

/// One developer-package interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub developer: u32,
    pub package: u32,
    pub timestamp: u64,
}

/// Parsed input files with string ids interned to dense indices.
#[derive(Debug, Clone, Default)]
pub struct RawCorpus {
    pub developers: Interner,
    pub packages: Interner,
    pub events: Vec<Event>,
    /// follower → followee
    pub social_edges: Vec<(u32, u32)>,
    /// package → package it depends on
    pub dependency_edges: Vec<(u32, u32)>,
}

fn malformed(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn split2(path: &Path, lineno: usize, line: &str) -> Result<(String, String)> {
    let mut it = line.split('\t');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => {
            if a.is_empty() || b.is_empty() {
                Err(malformed(path, lineno, "empty id field"))
            } else {
                Ok((a.to_string(), b.to_string()))
            }
        }
        _ => Err(malformed(path, lineno, "expected 2 tab-separated fields")),
    }
}

/// Parse the three input files. Ids are interned in encounter order: the
/// events file first, then social endpoints, then dependency endpoints.
pub fn ingest(events_path: &Path, social_path: &Path, dependency_path: &Path) -> Result<RawCorpus> {
    let events = fs::read_to_string(events_path).map_err(|e| Error::io(events_path, e))?;
    let social = fs::read_to_string(social_path).map_err(|e| Error::io(social_path, e))?;
    let deps = fs::read_to_string(dependency_path).map_err(|e| Error::io(dependency_path, e))?;
    ingest_text(
        (&events, events_path),
        (&social, social_path),
        (&deps, dependency_path),
    )
}

/// Same parsing as [`ingest`], over in-memory text. The paths only label
/// error messages.
pub fn ingest_text(
    (events_text, events_path): (&str, &Path),
    (social_text, social_path): (&str, &Path),
    (dependency_text, dependency_path): (&str, &Path),
) -> Result<RawCorpus> {
    let mut corpus = RawCorpus::default();

    for (lineno, line) in events_text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let mut it = line.split('\t');
        let (dev, pkg, ts) = match (it.next(), it.next(), it.next(), it.next()) {
            (Some(d), Some(p), Some(t), None) => (d, p, t),
            _ => {
                return Err(malformed(
                    events_path,
                    lineno,
                    "expected 3 tab-separated fields",
                ))
            }
        };
        if dev.is_empty() || pkg.is_empty() {
            return Err(malformed(events_path, lineno, "empty id field"));
        }
        let timestamp: u64 = ts.parse().map_err(|_| {
            malformed(
                events_path,
                lineno,
                format!("timestamp {ts:?} is not a non-negative integer"),
            )
        })?;
        let developer = corpus.developers.intern(dev);
        let package = corpus.packages.intern(pkg);
        corpus.events.push(Event {
            developer,
            package,
            timestamp,
        });
    }

    for (lineno, line) in social_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (from, to) = split2(social_path, lineno + 1, line)?;
        let from = corpus.developers.intern(&from);
        let to = corpus.developers.intern(&to);
        corpus.social_edges.push((from, to));
    }

    for (lineno, line) in dependency_text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (from, to) = split2(dependency_path, lineno + 1, line)?;
        let from = corpus.packages.intern(&from);
        let to = corpus.packages.intern(&to);
        corpus.dependency_edges.push((from, to));
    }

    Ok(corpus)
}
