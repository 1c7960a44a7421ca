use axum::extract::multipart::{MultipartError, MultipartRejection};
use axum::extract::rejection::JsonRejection;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use mpseg_core::Error;
use serde::{Deserialize, Serialize};

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub detail: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        ApiError { status, code, detail: detail.into() }
    }

    pub fn model_not_loaded(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "MODEL_NOT_LOADED", detail)
    }

    pub fn too_large(limit_bytes: usize) -> Self {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "TOO_LARGE", format!("request body exceeds {limit_bytes} bytes"))
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", detail)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NonImageFile { .. } => {
                return ApiError::new(StatusCode::BAD_REQUEST, "UNDECODABLE", e.to_string());
            }
            Error::UnknownSession(_) => StatusCode::NOT_FOUND,
            Error::SessionIncomplete { .. } | Error::SessionComplete | Error::DuplicateResponse(_) => StatusCode::CONFLICT,
            Error::DimensionMismatch(_)
            | Error::InvalidArgument(_)
            | Error::UnknownTrial(_)
            | Error::PoolTooSmall { .. }
            | Error::SchemaMismatch(_)
            | Error::InvalidManifest(_)
            | Error::Io { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<MultipartRejection> for ApiError {
    fn from(r: MultipartRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_MULTIPART", r.body_text())
    }
}

impl From<MultipartError> for ApiError {
    fn from(e: MultipartError) -> Self {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "TOO_LARGE", e.body_text())
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "BAD_MULTIPART", e.body_text())
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "TOO_LARGE", r.body_text());
        }
        ApiError::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.code.to_string(), detail: self.detail };
        (self.status, Json(body)).into_response()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_errors_map_to_statuses() {
        let cases = [
            (Error::UnknownSession("x".into()), StatusCode::NOT_FOUND, "UNKNOWN_SESSION"),
            (Error::DuplicateResponse(3), StatusCode::CONFLICT, "DUPLICATE_RESPONSE"),
            (Error::SessionIncomplete { answered: 1, total: 2 }, StatusCode::CONFLICT, "SESSION_INCOMPLETE"),
            (Error::UnknownTrial(9), StatusCode::BAD_REQUEST, "UNKNOWN_TRIAL"),
            (Error::NonImageFile { path: "u".into(), reason: "bad".into() }, StatusCode::BAD_REQUEST, "UNDECODABLE"),
            (Error::NumericNonFinite("x".into()), StatusCode::INTERNAL_SERVER_ERROR, "NUMERIC_NONFINITE"),
        ];
        for (e, status, code) in cases {
            let a = ApiError::from(e);
            assert_eq!((a.status, a.code), (status, code));
        }
    }
}
