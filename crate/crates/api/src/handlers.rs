use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::Response;
use chrono::{DateTime, Utc};
use eoc_core::classify::{self, CohortDef};
use eoc_core::extract::{load, LoadMode};
use eoc_core::filter;
use eoc_core::kpi::{self, TrackedItem};
use eoc_core::model::serialize_episode;
use eoc_core::store::EpisodeFilterQuery;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::params::{kpi_query, kpi_type, Params};
use crate::{canonical_body, json_response, AppState, Inner};

type Reply = Result<Response, ApiError>;
type QueryPairs = Result<Query<Vec<(String, String)>>, QueryRejection>;

fn ok<T: Serialize>(v: &T) -> Reply {
    Ok(json_response(StatusCode::OK, canonical_body(v)))
}

fn params(q: QueryPairs) -> Result<Params, ApiError> {
    q.map(|Query(pairs)| Params(pairs))
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| {
        let mut err = ApiError::bad_request(format!("invalid JSON body: {e}"));
        err.code = "invalid_body".into();
        err
    })
}

/// Runs CPU- or I/O-bound engine work off the async workers.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> Result<T, ApiError> + Send + 'static,
{
    let inner = state.inner.clone();
    tokio::task::spawn_blocking(move || f(&inner))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub last_ingest: Option<DateTime<Utc>>,
    pub episode_count: usize,
}

pub async fn health(State(s): State<AppState>) -> Reply {
    ok(&Health {
        status: "ok".into(),
        last_ingest: s.last_ingest(),
        episode_count: s.repo().snapshot().episode_count(),
    })
}

pub async fn kpis() -> Reply {
    ok(&kpi::descriptors())
}

pub async fn kpi(State(s): State<AppState>, Path(kpi): Path<String>, q: QueryPairs) -> Reply {
    let q = kpi_query(kpi_type(&kpi)?, &params(q)?, None)?;
    let series = blocking(&s, move |i| {
        Ok(kpi::compute_kpi(&i.repo.snapshot(), &i.repo.cohorts(), &i.config.kpi_context(), &q)?)
    })
    .await?;
    ok(&series)
}

pub async fn forecast(State(s): State<AppState>, Path(kpi): Path<String>, q: QueryPairs) -> Reply {
    let kpi = kpi_type(&kpi)?;
    let p = params(q)?;
    let horizon: u32 = p.required("horizon")?;
    let scenario: f64 = p.parse("scenario")?.unwrap_or(1.0);
    let result = blocking(&s, move |i| {
        let snap = i.repo.snapshot();
        let q = kpi_query(kpi, &p, kpi::data_months(&snap))?;
        Ok(kpi::forecast(&snap, &i.repo.cohorts(), &i.config.kpi_context(), &q, horizon, scenario)?)
    })
    .await?;
    ok(&result)
}

pub async fn compare(State(s): State<AppState>, Path(kpi): Path<String>, q: QueryPairs) -> Reply {
    let p = params(q)?;
    let q = kpi_query(kpi_type(&kpi)?, &p, None)?;
    if q.cohort.is_none() {
        return Err(ApiError::bad_request("missing parameter cohort"));
    }
    let pair = blocking(&s, move |i| {
        Ok(kpi::compare_to_average(&i.repo.snapshot(), &i.repo.cohorts(), &i.config.kpi_context(), &q)?)
    })
    .await?;
    ok(&pair)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentInfo {
    pub cohort_id: String,
    pub member_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<f64>,
}

/// A cohort definition with its latest materialized assignments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortListing {
    #[serde(flatten)]
    pub def: CohortDef,
    pub assignments: Vec<AssignmentInfo>,
}

pub async fn list_cohorts(State(s): State<AppState>) -> Reply {
    let registry = s.repo().cohorts();
    let list: Vec<CohortListing> = registry
        .defs
        .values()
        .map(|def| CohortListing {
            def: def.clone(),
            assignments: registry
                .assignments
                .get(&def.cohort_id)
                .into_iter()
                .flatten()
                .map(|a| AssignmentInfo {
                    cohort_id: a.cohort_id.clone(),
                    member_count: a.members.len(),
                    centroid: a.centroid,
                })
                .collect(),
        })
        .collect();
    ok(&list)
}

pub async fn create_cohort(State(s): State<AppState>, bytes: Bytes) -> Reply {
    let def: CohortDef = body(&bytes)?;
    let _w = s.lock_writes().await;
    let created = blocking(&s, move |i| Ok(classify::create_cohort(&i.repo, def)?)).await?;
    Ok(json_response(StatusCode::CREATED, canonical_body(&created)))
}

pub async fn materialize(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    let _w = s.lock_writes().await;
    let result = blocking(&s, move |i| Ok(classify::materialize(&i.repo, &id)?)).await?;
    ok(&result)
}

pub async fn get_episode(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    let e = s
        .repo()
        .get_episode(&id)
        .ok_or_else(|| ApiError::not_found("unknown_episode", format!("no episode {id:?}")))?;
    let doc = serialize_episode(&e).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_response(StatusCode::OK, doc))
}

pub async fn list_episodes(State(s): State<AppState>, q: QueryPairs) -> Reply {
    let p = params(q)?;
    let from = p.instant("from")?.unwrap_or(DateTime::<Utc>::MIN_UTC);
    let to = p.instant("to")?.unwrap_or(DateTime::<Utc>::MAX_UTC);
    let filter = p.filter().map(filter::parse).transpose()?;
    let limit: Option<usize> = p.parse("limit")?;
    let query = EpisodeFilterQuery::new(from, to)?
        .with_filter(filter)
        .with_cohort(p.text("cohort").map(String::from));
    let docs = blocking(&s, move |i| {
        let eps = i.repo.query_episodes(&query)?;
        eps.iter()
            .take(limit.unwrap_or(usize::MAX))
            .map(|e| serialize_episode(e).map_err(|e| ApiError::internal(e.to_string())))
            .collect::<Result<Vec<_>, _>>()
    })
    .await?;
    Ok(json_response(StatusCode::OK, format!("[{}]", docs.join(","))))
}

fn read_tracked(i: &Inner) -> Result<Vec<TrackedItem>, ApiError> {
    Ok(i.repo.read_tracked()?)
}

pub async fn list_tracked(State(s): State<AppState>) -> Reply {
    ok(&read_tracked(&s.inner)?)
}

pub async fn create_tracked(State(s): State<AppState>, bytes: Bytes) -> Reply {
    let item: TrackedItem = body(&bytes)?;
    item.validate()?;
    let _w = s.lock_writes().await;
    let item = blocking(&s, move |i| {
        let mut items = read_tracked(i)?;
        if items.iter().any(|t| t.item_id == item.item_id) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "duplicate_tracked",
                format!("tracked item {:?} already exists", item.item_id),
            ));
        }
        items.push(item.clone());
        i.repo.write_tracked(&items)?;
        Ok(item)
    })
    .await?;
    Ok(json_response(StatusCode::CREATED, canonical_body(&item)))
}

pub async fn delete_tracked(State(s): State<AppState>, Path(id): Path<String>) -> Reply {
    let _w = s.lock_writes().await;
    let removed = blocking(&s, move |i| {
        let mut items = read_tracked(i)?;
        let pos = items
            .iter()
            .position(|t| t.item_id == id)
            .ok_or_else(|| ApiError::not_found("unknown_tracked", format!("no tracked item {id:?}")))?;
        let removed = items.remove(pos);
        i.repo.write_tracked(&items)?;
        Ok(removed)
    })
    .await?;
    ok(&removed)
}

/// Status over the latest complete month before `now` (default: the
/// current time).
pub async fn tracked_status(State(s): State<AppState>, q: QueryPairs) -> Reply {
    let now = params(q)?.instant("now")?.unwrap_or_else(Utc::now);
    let statuses = blocking(&s, move |i| {
        let items = read_tracked(i)?;
        Ok(kpi::evaluate_tracked(&i.repo.snapshot(), &i.repo.cohorts(), &i.config.kpi_context(), &items, now))
    })
    .await?;
    ok(&statuses)
}

pub async fn ingest_run(State(s): State<AppState>, q: QueryPairs) -> Reply {
    let mode = if params(q)?.flag("rebuild")? {
        LoadMode::Rebuild
    } else {
        LoadMode::Increment
    };
    let Ok(_w) = s.inner.writer.try_lock() else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "ingest_running",
            "an ingest or another repository write is in progress",
        ));
    };
    let report = blocking(&s, move |i| Ok(load(&i.repo, &i.sources, &i.config.linkage, mode))).await?;
    if !report.ok() {
        let detail = serde_json::to_value(&report).map_err(|e| ApiError::internal(e.to_string()))?;
        return Err(ApiError::internal("ingest finished with errors").with_detail(detail));
    }
    *s.inner.last_ingest.write().unwrap() = Some(Utc::now());
    ok(&report)
}

pub async fn no_route() -> ApiError {
    ApiError::not_found("no_route", "no such endpoint")
}

pub async fn bad_method() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}
