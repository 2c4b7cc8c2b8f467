//! Session-based software package recommendation engine.
//!
//! The model couples a recurrent session encoder with a dual graph attention
//! network: developer representations absorb influence from the developers
//! they follow (weighted by attention over their recent sessions), and package
//! representations absorb influence from the packages they depend on. Both
//! influence paths are trained jointly against a next-package prediction
//! objective.
//!
//! The crate is organized as:
//!
//! - [`numerics`] — dense tensors, a reverse-mode gradient tape, and Adam.
//! - [`data`] — ingestion, session segmentation, filtering, splitting,
//!   neighborhood sampling, and a synthetic corpus generator.
//! - [`model`] — parameters and the forward computation.
//! - [`train`] — prediction instances, the loss, and the optimization loop.
//! - [`eval`] — HR@K / NDCG@K, ablation variants, sweeps, attention analytics.
//! - [`cli`] — the `pkgrec` command-line surface.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod train;
pub mod streams;

pub use error::{Error, Result};
