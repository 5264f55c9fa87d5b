//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by validation, I/O, and serialization across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A probability vector failed validation (range, sum, or length).
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    /// A confusion matrix failed validation (shape or row contents).
    #[error("invalid confusion matrix: {0}")]
    InvalidMatrix(String),

    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An engine or stream was driven outside its contract
    /// (out-of-range label, mismatched state, exhausted stream, ...).
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
