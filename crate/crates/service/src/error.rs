use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use crate::task::TaskStatus;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("task is {status}, expected {expected}")]
    WrongState { status: TaskStatus, expected: &'static str },

    #[error("pair ({left}, {right}) is not pending feedback")]
    UnknownPair { left: String, right: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown {side} entity `{entity}`")]
    UnknownEntity { side: String, entity: String },

    #[error("{0}")]
    BadRequest(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::UnknownTask(_) => "UnknownTask",
            ServiceError::WrongState { .. } => "WrongState",
            ServiceError::UnknownPair { .. } => "UnknownPair",
            ServiceError::InvalidDataset(_) => "InvalidDataset",
            ServiceError::InvalidConfig(_) => "InvalidConfig",
            ServiceError::UnknownEntity { .. } => "UnknownEntity",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn status_code(&self) -> StatusCode {
        match self {
            ServiceError::UnknownTask(_) | ServiceError::UnknownEntity { .. } => StatusCode::NOT_FOUND,
            ServiceError::WrongState { .. } => StatusCode::CONFLICT,
            ServiceError::UnknownPair { .. }
            | ServiceError::InvalidDataset(_)
            | ServiceError::InvalidConfig(_)
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<kgalign_core::Error> for ServiceError {
    fn from(e: kgalign_core::Error) -> Self {
        match e {
            kgalign_core::Error::UnknownEntity { side, entity } => {
                ServiceError::UnknownEntity { side: side.to_string(), entity }
            }
            kgalign_core::Error::InvalidConfig(msg) => ServiceError::InvalidConfig(msg),
            kgalign_core::Error::MalformedLine { .. } | kgalign_core::Error::MalformedReferenceLine(_) => {
                ServiceError::InvalidDataset(e.to_string())
            }
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.kind(), "message": self.to_string() }));
        (self.status_code(), body).into_response()
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;
