//! Corpus construction: file ingestion, session segmentation, thresholded
//! filtering, train/validation/test splitting, graph building, neighborhood
//! sampling, persistence, and a synthetic generator with planted social and
//! dependency signal.

pub mod corpus;
pub mod graph;
pub mod session;
pub mod store;
pub mod synth;

pub use corpus::{ingest, ingest_text, Event, Interner, RawCorpus};
pub use graph::{sample_tree, Graph, SampleTree};
pub use session::{
    filter_corpus, merge_lifespan, segment_sessions, split, Corpus, CorpusStats, DatasetSplit,
    Session, SessionIndex, SplitConfig, SplitLabel, MAX_SESSION_LEN, MIN_SESSION_LEN,
    WEEK_SECONDS,
};
pub use synth::{generate, SynthConfig, SynthData};

use crate::error::Result;

/// Full preprocessing pipeline: segment, filter, split.
pub fn prepare(
    raw: &RawCorpus,
    lifespan_weeks: u64,
    min_friends: usize,
    min_followers: usize,
    min_watchers: usize,
    split_config: &SplitConfig,
) -> Result<(Corpus, DatasetSplit)> {
    let sessions = segment_sessions(&raw.events, lifespan_weeks);
    let corpus = filter_corpus(raw, &sessions, min_friends, min_followers, min_watchers);
    let split = session::split(&corpus.sessions, split_config)?;
    Ok((corpus, split))
}
