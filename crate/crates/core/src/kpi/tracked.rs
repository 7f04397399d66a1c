use chrono::{DateTime, Months, Utc};
use serde::{Deserialize, Serialize};

use super::{compute_kpi, Bucket, KpiContext, KpiError, KpiQuery, KpiType};
use crate::classify::CohortRegistry;
use crate::store::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrackStatus {
    OnTrack,
    AtRisk,
}

/// A saved monthly KPI query with a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedItem {
    pub item_id: String,
    pub name: String,
    pub query: KpiQuery,
    pub target: f64,
    pub direction: Direction,
}

impl TrackedItem {
    pub fn validate(&self) -> Result<(), KpiError> {
        if self.item_id.is_empty() {
            return Err(KpiError::Invalid("item_id must be non-empty".into()));
        }
        if !self.target.is_finite() {
            return Err(KpiError::Invalid("target must be finite".into()));
        }
        if self.query.bucket != Bucket::Month {
            return Err(KpiError::Invalid("tracked queries use MONTH buckets".into()));
        }
        if !self.query.group_by.is_empty() {
            return Err(KpiError::Invalid("tracked queries are not stratified".into()));
        }
        self.query.validate().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedStatus {
    pub item_id: String,
    pub name: String,
    pub kpi: KpiType,
    pub period_start: DateTime<Utc>,
    pub period_end: DateTime<Utc>,
    pub value: Option<f64>,
    pub target: f64,
    pub direction: Direction,
    pub status: TrackStatus,
    pub value_absent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The last calendar month that ended at or before `now`.
pub fn latest_complete_month(now: DateTime<Utc>) -> (DateTime<Utc>, DateTime<Utc>) {
    let end = Bucket::Month.next_boundary(now) - Months::new(1);
    (end - Months::new(1), end)
}

/// Status of each item over the latest complete month. Targets are
/// inclusive: a value equal to the target is on track.
pub fn evaluate_tracked(
    snap: &Snapshot,
    cohorts: &CohortRegistry,
    ctx: &KpiContext,
    items: &[TrackedItem],
    now: DateTime<Utc>,
) -> Vec<TrackedStatus> {
    let (start, end) = latest_complete_month(now);
    items
        .iter()
        .map(|item| {
            let mut q = item.query.clone();
            q.from = start;
            q.to = end;
            q.bucket = Bucket::Month;
            q.group_by.clear();
            let (value, error) = match compute_kpi(snap, cohorts, ctx, &q) {
                Ok(s) => (s.buckets.first().and_then(|b| b.value), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let on_track = value.is_some_and(|v| match item.direction {
                Direction::AtMost => v <= item.target,
                Direction::AtLeast => v >= item.target,
            });
            TrackedStatus {
                item_id: item.item_id.clone(),
                name: item.name.clone(),
                kpi: item.query.kpi,
                period_start: start,
                period_end: end,
                value,
                target: item.target,
                direction: item.direction,
                status: if on_track {
                    TrackStatus::OnTrack
                } else {
                    TrackStatus::AtRisk
                },
                value_absent: value.is_none(),
                error,
            }
        })
        .collect()
}
