//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgmError {
    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// An opcode was applied outside its domain (ln of a non-positive
    /// value, division by zero, ...).
    #[error("domain violation in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// A solver or training loop produced a non-finite or diverging result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DgmError>;
