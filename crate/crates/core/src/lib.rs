//! Hierarchical transformer for multi-source irregular clinical time series.
//!
//! Each source's records are tokenized per feature and summarised per time
//! point, each source's sequence of time-encoded summaries is summarised by
//! a second transformer, and the per-source summaries are projected into a
//! shared space, mixed by a source-level transformer and pooled with learned
//! attention weights before the classification head.

pub mod data;
pub mod model;
pub mod error;
pub mod eval;
pub mod inference;
pub mod preprocess;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
