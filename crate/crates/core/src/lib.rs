//! Deep predictors for financial panels: configurable feedforward nets with
//! exact back-propagation, dropout and penalty regularization, time-split
//! model selection with SURE risk estimates, sparse bottleneck auto-encoders
//! with a PCA baseline, LSTM/RNN sequence models, and an index-tracking
//! pipeline that selects a small asset basis by communal-information ranking.
//!
//! Everything runs on a small dense-matrix substrate with a pinned
//! deterministic RNG, so any seeded run reproduces bit-for-bit.

pub mod autoencoder;
pub mod error;
pub mod indexing;
pub mod lstm;
pub mod model_selection;
pub mod network;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng, Vector};
