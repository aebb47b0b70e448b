//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value is out of range or inconsistent with another.
    #[error("invalid config: {0}")]
    Config(String),

    /// Array dimensions do not line up for the requested operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Token ids outside the vocabulary, unknown special tokens, etc.
    #[error("tokenizer: {0}")]
    Tokenizer(String),

    /// Corpus or dataset problems (empty split, window larger than data...).
    #[error("data: {0}")]
    Data(String),

    /// Checkpoint serialization / deserialization failures.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Numerical failure (NaN/Inf loss, divergent fixed point...).
    #[error("numeric: {0}")]
    Numeric(String),

    /// Underlying I/O error.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CoreError {
    /// Short machine-readable category used by the CLI for `error[...]` lines.
    pub fn category(&self) -> &'static str {
        match self {
            CoreError::Config(_) => "config",
            CoreError::Shape(_) => "shape",
            CoreError::Tokenizer(_) => "tokenizer",
            CoreError::Data(_) => "data",
            CoreError::Checkpoint(_) => "checkpoint",
            CoreError::Numeric(_) => "numeric",
            CoreError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
