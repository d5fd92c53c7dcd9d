use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use car_core::CarError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("trial {0} not found")]
    NotFound(String),

    #[error("a trial named {0:?} already exists")]
    Duplicate(String),

    #[error("missing or invalid bearer token")]
    Unauthorized,

    #[error("{message}")]
    BadRequest { message: String, path: Option<String> },

    #[error("corrupt trials index: {0}")]
    CorruptIndex(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] CarError),
}

impl ServiceError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ServiceError::BadRequest {
            message: message.into(),
            path: None,
        }
    }

    fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Duplicate(_) => StatusCode::CONFLICT,
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::BadRequest { .. } => StatusCode::BAD_REQUEST,
            ServiceError::Io { .. } | ServiceError::CorruptIndex(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(e) => match e {
                CarError::InvalidInput(_) | CarError::Config { .. } | CarError::Json(_) | CarError::Csv(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::Duplicate(_) => "duplicate",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::BadRequest { .. } => "bad_request",
            ServiceError::Io { .. } => "io",
            ServiceError::CorruptIndex(_) => "corrupt_index",
            ServiceError::Core(e) => e.code(),
        }
    }
}

/// Wire form of every error response.
#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    pub path: Option<String>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let path = match &self {
            ServiceError::BadRequest { path, .. } => path.clone(),
            ServiceError::Core(CarError::Config { path, .. }) => Some(path.clone()),
            _ => None,
        };
        let message = match &self {
            ServiceError::Core(CarError::Config { message, .. }) => message.clone(),
            other => other.to_string(),
        };
        let body = ErrorBody {
            code: self.code(),
            message,
            path,
        };
        (self.status(), Json(body)).into_response()
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;
