//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by parsing, decoding, training and sampling.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed code file (alist or dense matrix text).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A vector had the wrong length for the code it was used with.
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    /// An invalid configuration value was supplied.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Tensor shapes do not match between weights, gradients or optimizer state.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or divergence was detected where the guards should have prevented it.
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A sampler could not produce the requested batch.
    #[error("sampling failed: {0}")]
    Sampling(String),

    /// Data was too degenerate to fit (empty target set, collapsed variance).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// A weights file does not belong to the code it was loaded for.
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
