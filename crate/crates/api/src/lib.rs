//! HTTP service over the episode-of-care engine.
//!
//! Every body, success or error, is canonical JSON (object keys sorted), so a
//! response can be compared byte-for-byte with the engine's own output.
//! There is no authentication; the default bind address is loopback.

mod error;
mod handlers;
pub mod params;

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use eoc_core::config::{ConfigError, PlatformConfig};
use eoc_core::extract::{MappingProfile, SourceConfig};
use eoc_core::store::Repository;
use serde::Serialize;
use tokio::sync::{Mutex, MutexGuard};
use tower_http::cors::CorsLayer;

pub use error::ApiError;
pub use handlers::{CohortListing, Health};

struct Inner {
    repo: Repository,
    config: PlatformConfig,
    sources: Vec<(SourceConfig, MappingProfile)>,
    writer: Mutex<()>,
    last_ingest: RwLock<Option<DateTime<Utc>>>,
}

/// Shared service state: the read-write repository handle plus the lock that
/// serializes ingestion with other repository writes.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(repo: Repository, config: PlatformConfig) -> Result<Self, ConfigError> {
        let sources = config.resolved_sources()?;
        Ok(AppState {
            inner: Arc::new(Inner {
                repo,
                config,
                sources,
                writer: Mutex::new(()),
                last_ingest: RwLock::new(None),
            }),
        })
    }

    pub fn repo(&self) -> &Repository {
        &self.inner.repo
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.inner.config
    }

    /// Holds the write lock; while held, `POST /ingest/run` answers 409.
    pub async fn lock_writes(&self) -> MutexGuard<'_, ()> {
        self.inner.writer.lock().await
    }

    pub fn last_ingest(&self) -> Option<DateTime<Utc>> {
        *self.inner.last_ingest.read().unwrap()
    }
}

/// Canonical JSON of any serializable value; the exact body the API sends.
pub fn canonical_body<T: Serialize>(v: &T) -> String {
    eoc_core::model::to_canonical_string(v)
}

pub(crate) fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(handlers::health))
        .route("/kpis", get(handlers::kpis))
        .route("/kpi/{kpi}", get(handlers::kpi))
        .route("/kpi/{kpi}/forecast", get(handlers::forecast))
        .route("/kpi/{kpi}/compare", get(handlers::compare))
        .route("/cohorts", get(handlers::list_cohorts).post(handlers::create_cohort))
        .route("/cohorts/{id}/materialize", post(handlers::materialize))
        .route("/episodes", get(handlers::list_episodes))
        .route("/episodes/{id}", get(handlers::get_episode))
        .route("/tracked", get(handlers::list_tracked).post(handlers::create_tracked))
        .route("/tracked/status", get(handlers::tracked_status))
        .route("/tracked/{id}", delete(handlers::delete_tracked))
        .route("/ingest/run", post(handlers::ingest_run))
        .fallback(handlers::no_route)
        .method_not_allowed_fallback(handlers::bad_method)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state)).await
}
