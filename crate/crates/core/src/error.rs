use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the tuning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("codec `{codec}` does not support {dims}-dimensional data")]
    UnsupportedDimensionality { codec: String, dims: usize },

    #[error("codec `{codec}` does not support {control} error control")]
    UnsupportedControl { codec: String, control: String },

    #[error("bound {bound:e} is below the minimum {min:e} accepted by codec `{codec}`")]
    BoundTooSmall { codec: String, bound: f64, min: f64 },

    #[error("codec `{codec}` rejected bound {bound:e}")]
    BoundUnsupported { codec: String, bound: f64 },

    #[error("buffer produced by codec `{found}` cannot be decoded by `{expected}`")]
    CodecMismatch { expected: String, found: String },

    #[error("corrupted buffer: {0}")]
    Corrupted(String),

    #[error("codec `{codec}` failed: {message}")]
    Codec { codec: String, message: String },

    #[error("region {region}: {source}")]
    Region {
        region: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation at bound {bound:e} failed: {source}")]
    Evaluation {
        bound: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("every region failed; first failure: {0}")]
    AllRegionsFailed(Box<Error>),

    #[error("search cancelled")]
    Cancelled,

    #[error("size mismatch for {path}: expected {expected} bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("pattern `{0}` matched no files")]
    EmptyMatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupted(msg: impl Into<String>) -> Self {
        Error::Corrupted(msg.into())
    }

    /// True when this error, possibly wrapped, is a cancellation.
    pub fn is_cancelled(&self) -> bool {
        match self {
            Error::Cancelled => true,
            Error::Region { source, .. } | Error::Evaluation { source, .. } => {
                source.is_cancelled()
            }
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
