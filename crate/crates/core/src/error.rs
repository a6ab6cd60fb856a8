//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Requested element count overflows the platform index range.
    #[error("size error: {0}")]
    Size(String),

    /// Invalid configuration (hyperparameters, architecture, experiment spec).
    #[error("config error: {0}")]
    Config(String),

    /// Bad input data (labels out of range, empty classes, mismatched sets).
    #[error("data error: {0}")]
    Data(String),

    /// API misuse that the caller can fix (wrong mode, stale index).
    #[error("usage error: {0}")]
    Usage(String),

    /// Internal records (switches, checkpoints) are inconsistent.
    #[error("corruption error: {0}")]
    Corrupt(String),

    /// Training produced a non-finite loss.
    #[error("divergence error: {0}")]
    Divergence(String),

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    /// A multi-stage process failed part way through.
    #[error("process error: {0}")]
    Process(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
