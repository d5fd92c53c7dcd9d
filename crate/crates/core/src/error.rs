use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CarError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value failed validation. `path` is a JSON-pointer-ish
    /// location such as `policies[2].p`.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error("corrupt event log at unit {unit_index}: {message}")]
    CorruptLog { unit_index: u64, message: String },

    #[error("event log integrity check failed at unit {unit_index}: {message}")]
    Integrity { unit_index: u64, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CarError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CarError::InvalidInput(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CarError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CarError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag, used by the CLI and the HTTP error body.
    pub fn code(&self) -> &'static str {
        match self {
            CarError::InvalidInput(_) => "invalid_input",
            CarError::Config { .. } => "config",
            CarError::CorruptLog { .. } => "corrupt_log",
            CarError::Integrity { .. } => "integrity",
            CarError::Io { .. } => "io",
            CarError::Csv(_) => "csv",
            CarError::Json(_) => "json",
        }
    }
}
