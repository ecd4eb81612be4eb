//! Crate-wide error type.
//!
//! Variants are grouped by how callers react to them: structural problems
//! (dimension, non-finite input) abort immediately, `Validation` failures
//! carry a human-readable witness, and the two empty-set variants signal
//! that a confidence construction eliminated everything, which experiment
//! drivers surface as a distinct exit condition.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("spec validation failed: {0}")]
    Validation(String),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("empty confidence set: {0}")]
    EmptyConfidenceSet(String),

    #[error("empty model class: {0}")]
    EmptyModelClass(String),

    #[error("inequality violation: {0}")]
    LemmaViolation(String),

    #[error("bad config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
