use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An invalid configuration value or inconsistent declaration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes that cannot be combined.
    #[error("shape error: {0}")]
    Shape(String),

    /// Vector lengths or array ranks that disagree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A persisted artifact is missing or malformed.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A required input artifact does not exist yet.
    #[error("{0}")]
    Missing(String),

    /// Training or evaluation failed at runtime (e.g. non-finite loss).
    #[error("runtime failure: {0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Whether the error stems from user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Shape(_) | Error::Dimension(_) | Error::Format { .. } | Error::Missing(_) | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
