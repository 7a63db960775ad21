use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StairError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum StairError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: row {row}, column {column} ({name}): {message}")]
    BadCell {
        path: PathBuf,
        row: usize,
        column: usize,
        name: String,
        message: String,
    },

    #[error("{path}: row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        path: PathBuf,
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("non-finite prediction in windows {windows:?}")]
    NonFinitePrediction { windows: Vec<usize> },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl StairError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StairError::Io {
            path: path.into(),
            source,
        }
    }
}
