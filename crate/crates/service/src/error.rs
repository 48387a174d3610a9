use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use angioforge_core::pipeline::PipelineError;

/// JSON error body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    /// Backend requests made before giving up, for 502 responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, error: &str, message: impl ToString) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: error.to_string(),
                message: message.to_string(),
                attempts: None,
            },
        }
    }

    pub fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl ToString) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn busy(id: &str) -> Self {
        Self::new(
            StatusCode::CONFLICT,
            "session_busy",
            format!("another request is in flight for session {id}"),
        )
    }

    pub fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        use PipelineError::*;
        let (status, code) = match &e {
            UndecodableImage(_) => (StatusCode::BAD_REQUEST, "undecodable_image"),
            ImageTooSmall { .. } => (StatusCode::BAD_REQUEST, "image_too_small"),
            ImageTooLarge { .. } => (StatusCode::BAD_REQUEST, "image_too_large"),
            InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
            EmptyPrompt => (StatusCode::BAD_REQUEST, "empty_prompt"),
            SessionComplete => (StatusCode::CONFLICT, "session_complete"),
            SessionAborted => (StatusCode::CONFLICT, "session_aborted"),
            NoPriorAttempt(_) => (StatusCode::CONFLICT, "no_prior_attempt"),
            StepNotCurrent { .. } => (StatusCode::CONFLICT, "step_not_current"),
            AlreadyDecided { .. } => (StatusCode::CONFLICT, "already_decided"),
            NonDeterministicBackend(_) => (StatusCode::CONFLICT, "non_deterministic_backend"),
            RecordNotFound { .. } => (StatusCode::NOT_FOUND, "record_not_found"),
            SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
            MissingArtifact(_) => (StatusCode::NOT_FOUND, "missing_artifact"),
            BackendFailure(_) => (StatusCode::BAD_GATEWAY, "backend_failure"),
            StorageFull => (StatusCode::INSUFFICIENT_STORAGE, "storage_full"),
            ManifestCorrupt(_) => (StatusCode::INTERNAL_SERVER_ERROR, "manifest_corrupt"),
            Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        let mut err = ApiError::new(status, code, &e);
        if let BackendFailure(b) = &e {
            err.body.attempts = b.attempts();
        }
        err
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.body.error, self.body.message);
        }
        (self.status, Json(self.body)).into_response()
    }
}
