use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use eoc_core::classify::CohortError;
use eoc_core::filter::FilterError;
use eoc_core::kpi::KpiError;
use eoc_core::store::StoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::json_response;

/// Body of every 4xx/5xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    /// Byte offset into the filter text, for filter errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    /// Structured context, e.g. the ingest report on a partial failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            offset: None,
            detail: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        json_response(status, eoc_core::model::to_canonical_string(&self))
    }
}

impl From<FilterError> for ApiError {
    fn from(e: FilterError) -> Self {
        let mut err = Self::new(StatusCode::BAD_REQUEST, "invalid_filter", e.to_string());
        err.offset = Some(e.offset());
        err
    }
}

impl From<KpiError> for ApiError {
    fn from(e: KpiError) -> Self {
        match e {
            KpiError::Filter(f) => f.into(),
            KpiError::UnknownCohort(_) => Self::not_found("unknown_cohort", e.to_string()),
            KpiError::Invalid(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e.to_string()),
            KpiError::InsufficientHistory { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "insufficient_history", e.to_string())
            }
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownCohort(_) => Self::not_found("unknown_cohort", e.to_string()),
            StoreError::InvalidQuery(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_query", e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<CohortError> for ApiError {
    fn from(e: CohortError) -> Self {
        match e {
            CohortError::Rule(f) => f.into(),
            CohortError::Invalid(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_cohort", e.to_string()),
            CohortError::Duplicate(_) => Self::new(StatusCode::CONFLICT, "duplicate_cohort", e.to_string()),
            CohortError::Unknown(_) => Self::not_found("unknown_cohort", e.to_string()),
            CohortError::TooFewPoints { .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "too_few_points", e.to_string())
            }
            CohortError::Store(s) => s.into(),
        }
    }
}
