use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use thinktank_core::{Error, Violation};

/// Error body: `{"error": <kind>, "message": <text>, "violations": [...]}`.
#[derive(Debug)]
pub struct ApiError(pub Error);

#[derive(Serialize)]
struct Body<'a> {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    violations: Option<&'a [Violation]>,
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match &self.0 {
            Error::Validation(_) => StatusCode::BAD_REQUEST,
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::Conflict(_) | Error::State(_) | Error::Precondition(_) => StatusCode::CONFLICT,
            Error::Gateway(_) => StatusCode::BAD_GATEWAY,
            Error::Configuration(_) | Error::Integrity { .. } | Error::FormatVersion { .. } | Error::Io { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    fn kind(&self) -> &'static str {
        match &self.0 {
            Error::Validation(_) => "validation",
            Error::NotFound { .. } => "not_found",
            Error::Conflict(_) => "conflict",
            Error::State(_) => "state",
            Error::Precondition(_) => "precondition",
            Error::Gateway(_) => "gateway",
            Error::Configuration(_) => "configuration",
            Error::Integrity { .. } | Error::FormatVersion { .. } => "integrity",
            Error::Io { .. } => "io",
        }
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        Self(err)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let violations = match &self.0 {
            Error::Validation(v) => Some(v.as_slice()),
            _ => None,
        };
        let body = Body {
            error: self.kind(),
            message: self.0.to_string(),
            violations,
        };
        (status, Json(body)).into_response()
    }
}
