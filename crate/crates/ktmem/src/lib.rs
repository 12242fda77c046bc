//! Memory-network models for knowledge tracing.
//!
//! The crate provides a small reverse-mode autodiff core, three sequence
//! models over (exercise, response) streams (a key-value memory network, a
//! single-matrix memory-augmented baseline, and an LSTM baseline), a
//! synthetic-student generator with ground-truth concept labels, evaluation
//! metrics (AUC, adjusted mutual information), a deterministic trainer, and
//! concept-discovery/knowledge-state analysis utilities.

pub mod analysis;
pub mod checkpoint;
pub mod diff;
pub mod dkt;
pub mod dkvmn;
pub mod encoding;
pub mod mann;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synthgen;
pub mod tensor;
pub mod trainer;
pub mod verify;
