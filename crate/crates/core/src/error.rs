use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AstnError>;

#[derive(Debug, Error)]
pub enum AstnError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; build a fresh tape for another pass")]
    BackwardTwice,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("cannot build split: {0}")]
    Split(String),

    #[error("cannot sample batch: {0}")]
    Sampling(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("malformed {kind} file {path}: {detail}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
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

impl AstnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AstnError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AstnError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        AstnError::Format {
            kind,
            path: path.into(),
            detail: detail.into(),
        }
    }
}
