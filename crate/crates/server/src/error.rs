use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use sdft_core::curation::CurationError;
use sdft_core::dataset::ExportError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into() } }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        let message = e.to_string();
        match e {
            CurationError::UnknownRecord(_) => Self::not_found(message),
            CurationError::DuplicateRecord(_) => Self::conflict("duplicate_record", message),
            CurationError::InvalidTransition { .. } => Self::conflict("invalid_transition", message),
            CurationError::EmptyEdit => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_edit", message),
            CurationError::MissingTurn(_) | CurationError::InvalidTriplet(_) => Self::unprocessable(message),
            CurationError::Export(ExportError::ValidationFailure(_)) => Self::conflict("export_invalid", message),
            CurationError::Io { .. } | CurationError::CorruptLog { .. } | CurationError::Export(_) => {
                tracing::error!(error = %message, "store failure");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}
