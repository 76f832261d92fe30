//! Utilization-rate analysis and utilization-aware sequence-to-sequence training.
//!
//! The crate covers the full experiment pipeline: an ontology and a lookup
//! concept recognizer, parallel corpora (with a synthetic generator that plants
//! known utilization rates), utilization-rate estimation, a small
//! encoder-decoder trained with NLL plus a utilization regularizer, plain and
//! lexically constrained beam search, and the evaluation metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod corpus;
pub mod decode;
mod error;
pub mod eval;
pub mod experiment;
mod files;
pub mod losses;
pub mod model;
pub mod ontology;
pub mod plot;
pub mod recognizer;
pub mod synthgen;
pub mod trainer;
pub mod utilization;

pub use error::{Error, Result};
