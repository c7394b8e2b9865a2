//! Error type shared across the toolkit.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by corpus handling, training, and estimation.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix had the wrong size for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A configuration value violates its documented range or relation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation received input outside its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A corpus file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A record violates a corpus invariant.
    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    /// The corpus cannot support training (e.g. one label class missing globally).
    #[error("unusable corpus: {0}")]
    UnusableCorpus(String),

    /// The similarity projection collapsed below the norm floor.
    #[error("degenerate embedding: projection norm {norm:e} below floor")]
    DegenerateEmbedding { norm: f64 },

    /// A non-finite value appeared where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient.
    #[error("numerical divergence ({what}) at epoch {epoch}, batch {batch}")]
    Divergence {
        what: String,
        epoch: usize,
        batch: usize,
    },

    /// A metric is undefined for the given counts (e.g. recall with P = 0).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),
}
