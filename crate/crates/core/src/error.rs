use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DbmError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("too many enumerated nodes: {nodes} (limit {limit})")]
    Capacity { nodes: usize, limit: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl DbmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DbmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DbmError::Shape(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        DbmError::Domain(msg.into())
    }
}

pub type Result<T, E = DbmError> = std::result::Result<T, E>;
