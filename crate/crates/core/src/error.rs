use thiserror::Error;

use crate::numtheory::CanonicalKey;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pattern {index}: {reason}")]
    InvalidPattern { index: usize, reason: String },

    #[error("invalid family: {0}")]
    InvalidFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The exact search gave up; no value (and in particular no bound) is produced.
    #[error("search limit of {limit} nodes exceeded while solving block {key}")]
    ResourceLimit { key: CanonicalKey, limit: u64 },

    #[error("input too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
