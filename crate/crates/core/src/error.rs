use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {location}: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("validation failed for {key}: {message}")]
    Validation { key: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("partial series for {key}: missing rounds {missing:?}")]
    PartialSeries { key: String, missing: Vec<u32> },

    #[error("missing scorer channel: {0}")]
    MissingChannel(String),

    #[error("undetectable: {0}")]
    Undetectable(String),

    #[error("insufficient sample: {0}")]
    InsufficientSample(String),

    #[error("invalid input: {0}")]
    Invalid(String),

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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn validation(key: impl ToString, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
