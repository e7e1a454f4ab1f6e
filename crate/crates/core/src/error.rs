//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by construction, shape checking, training, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not chain.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A constructor or operation received an argument outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A NaN or infinity reached a boundary that admits only finite values.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The training objective left the finite range.
    #[error("training diverged at epoch {epoch}: objective = {objective}")]
    Diverged { epoch: usize, objective: f64 },

    /// An activation that cannot be differentiated was handed to a trainer.
    #[error("unsupported activation for training: {0}")]
    UnsupportedActivation(&'static str),

    /// A model file or panel file failed to parse.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
