#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use eoc_api::{router, ApiError, AppState};
use eoc_core::config::PlatformConfig;
use eoc_core::store::{Mode, Repository};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub fn state(cfg_path: &Path) -> AppState {
    let cfg = PlatformConfig::load(cfg_path).expect("config loads");
    let repo = Repository::open(&cfg.repository, Mode::ReadWrite).expect("repository opens");
    repo.set_sync(false);
    AppState::new(repo, cfg).expect("state builds")
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("body is not JSON ({e}): {}", self.body))
    }

    pub fn error(&self) -> ApiError {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("body is not an ApiError ({e}): {}", self.body))
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> Reply {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply {
        status,
        headers,
        body: String::from_utf8(bytes.to_vec()).unwrap(),
    }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, Method::GET, uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: Option<&str>) -> Reply {
    call(app, Method::POST, uri, body).await
}

/// `path?k=v&...` with form encoding.
pub fn uri(path: &str, pairs: &[(&str, &str)]) -> String {
    if pairs.is_empty() {
        return path.to_string();
    }
    let qs = url::form_urlencoded::Serializer::new(String::new())
        .extend_pairs(pairs)
        .finish();
    format!("{path}?{qs}")
}

pub fn app(cfg_path: &Path) -> (AppState, Router) {
    let s = state(cfg_path);
    (s.clone(), router(s))
}
