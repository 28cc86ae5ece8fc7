use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use cardkit_core::model::SchemaError;
use cardkit_core::validate::Diagnostic;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("deck has error diagnostics")]
    Invalid(Vec<Diagnostic>),
    #[error("snapshot: {0}")]
    Snapshot(#[from] std::io::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (status, body) = match self {
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, json!({ "error": message })),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({ "error": message })),
            ApiError::Schema(e) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({
                    "error": message,
                    "diagnostics": [{
                        "code": "E_SCHEMA",
                        "severity": "error",
                        "path": e.path,
                        "message": e.reason,
                    }],
                }),
            ),
            ApiError::Invalid(diagnostics) => {
                (StatusCode::CONFLICT, json!({ "error": message, "diagnostics": diagnostics }))
            }
            ApiError::Snapshot(_) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message })),
        };
        (status, Json(body)).into_response()
    }
}

/// Failures while building the service state.
#[derive(Debug, Error)]
pub enum StartupError {
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Snapshot { path: std::path::PathBuf, reason: String },
}
