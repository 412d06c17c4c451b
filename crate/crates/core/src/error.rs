use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("cannot normalize a zero-norm embedding")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid count data: {0}")]
    InvalidCounts(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("embedding provider failed for {key:?}: {message}")]
    Provider { key: Option<String>, message: String },

    #[error("problem too large for brute force: {masks} masks x {categories} categories (limit 10 x 4)")]
    TooLarge { masks: usize, categories: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

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

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
