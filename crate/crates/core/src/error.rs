//! Error type shared by all modules.

use thiserror::Error;

/// Library result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("slope/angle tuple outside amplitude model validity (non-positive distance term at antenna {antenna})")]
    AmplitudeModelInvalid { antenna: usize },

    #[error("dictionary of {required_bytes} bytes exceeds the {limit_bytes} byte limit ({rows} x {cols} columns, 4 matrices)")]
    DictionaryTooLarge {
        required_bytes: usize,
        limit_bytes: usize,
        rows: usize,
        cols: usize,
    },

    #[error("zero signal: {0}")]
    ZeroSignal(String),

    #[error("estimator diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("rank-deficient least squares on support of size {0}")]
    RankDeficient(usize),

    #[error("cache i/o: {0}")]
    CacheIo(String),

    #[error("cache format: {0}")]
    CacheFormat(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
