//! Brute-force KPI aggregation over the generator's plan.
//!
//! Deliberately shares nothing with the KPI engine beyond the output types:
//! bucket boundaries are found by walking days, every (bucket, episode) pair
//! is visited, and strata come straight from the planned demographics.

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc, Weekday};
use serde::{Deserialize, Serialize};

use super::{Plan, PlannedEpisode};
use crate::kpi::{Bucket, BucketRow, Cell, GroupField, KpiType};
use crate::model::EventType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEpisode {
    pub patient_id: String,
    /// Sorted.
    pub event_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSeries {
    pub kpi: KpiType,
    pub bucket: Bucket,
    pub group_by: Vec<GroupField>,
    pub buckets: Vec<BucketRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub window_from: DateTime<Utc>,
    pub window_to: DateTime<Utc>,
    pub bed_capacity: u32,
    pub antibiotic_classes: Vec<String>,
    pub data_end: Option<DateTime<Utc>>,
    pub episodes: Vec<TruthEpisode>,
    pub series: Vec<TruthSeries>,
}

impl GroundTruth {
    pub fn series(&self, kpi: KpiType, bucket: Bucket, group_by: &[GroupField]) -> Option<&TruthSeries> {
        self.series
            .iter()
            .find(|s| s.kpi == kpi && s.bucket == bucket && s.group_by == group_by)
    }
}

fn buckets(from: DateTime<Utc>, to: DateTime<Utc>, b: Bucket) -> Vec<(DateTime<Utc>, DateTime<Utc>)> {
    let mut starts = vec![from];
    let mut day = from.date_naive().and_hms_opt(0, 0, 0).unwrap().and_utc() + Duration::days(1);
    while day < to {
        let d = day.date_naive();
        let cut = match b {
            Bucket::Day => true,
            Bucket::Week => d.weekday() == Weekday::Mon,
            Bucket::Month => d.day() == 1,
        };
        if cut {
            starts.push(day);
        }
        day += Duration::days(1);
    }
    let mut out = Vec::new();
    for (i, s) in starts.iter().enumerate() {
        out.push((*s, starts.get(i + 1).copied().unwrap_or(to)));
    }
    out
}

fn band(birth: NaiveDate, at: DateTime<Utc>) -> &'static str {
    let d = at.date_naive();
    let mut age = d.year() - birth.year();
    if d.ordinal0() < birth.with_year(d.year()).map_or(birth.ordinal0(), |b| b.ordinal0()) {
        age -= 1;
    }
    match age {
        ..18 => "0-17",
        18..40 => "18-39",
        40..60 => "40-59",
        60..80 => "60-79",
        _ => "80+",
    }
}

fn stratum(plan: &Plan, ep: &PlannedEpisode, group_by: &[GroupField]) -> String {
    if group_by.is_empty() {
        return "all".into();
    }
    let known = plan.has_demographics[ep.patient];
    let p = &plan.patients[ep.patient];
    let parts: Vec<String> = group_by
        .iter()
        .map(|g| match g {
            GroupField::Gender => {
                format!("gender={}", if known { p.gender.as_str() } else { "unknown" })
            }
            GroupField::AgeBand => {
                format!("age_band={}", if known { band(p.birth, ep.admission) } else { "unknown" })
            }
            GroupField::Department => format!("department={}", ep.department),
        })
        .collect();
    parts.join("|")
}

/// Contributions of one episode to one bucket: a list of numbers whose
/// meaning depends on the KPI.
fn contributions(
    plan: &Plan,
    ep: &PlannedEpisode,
    kpi: KpiType,
    (bs, be): (DateTime<Utc>, DateTime<Utc>),
    data_end: Option<DateTime<Utc>>,
) -> Vec<f64> {
    let inside = |t: DateTime<Utc>| bs <= t && t < be;
    let discharged_here = ep.discharge.is_some_and(inside);
    match kpi {
        KpiType::OccupancyRate => {
            if !ep.inpatient {
                return vec![];
            }
            let lo = ep.admission.max(bs);
            let hi = ep.discharge.unwrap_or(be).min(be);
            let ms = (hi - lo).num_milliseconds();
            if ms > 0 { vec![ms as f64] } else { vec![] }
        }
        KpiType::AvgLos if ep.inpatient && discharged_here => {
            let ms = (ep.discharge.unwrap() - ep.admission).num_milliseconds();
            vec![ms as f64 / 86_400_000.0]
        }
        KpiType::MortalityRate if ep.inpatient && discharged_here => {
            vec![if ep.died() { 1.0 } else { 0.0 }]
        }
        KpiType::Readmission30d if ep.inpatient && discharged_here => {
            let d = ep.discharge.unwrap();
            let limit = d + Duration::days(30);
            if data_end.is_none_or(|e| limit > e) {
                return vec![];
            }
            let back = plan.episodes.iter().any(|o| {
                o.patient == ep.patient
                    && o.rows_of(EventType::Admission)
                        .iter()
                        .any(|(t, _)| *t > d && *t <= limit)
            });
            vec![if back { 1.0 } else { 0.0 }]
        }
        KpiType::ContributionMargin if discharged_here => {
            vec![(ep.sum_cents(EventType::BillingCharge) - ep.sum_cents(EventType::CostEntry)) as f64]
        }
        KpiType::SepsisDoorToAntibiotic => match ep.sepsis(&plan_classes()) {
            Some((flag, m)) if inside(flag) => vec![m],
            _ => vec![],
        },
        KpiType::AdmissionCount => ep
            .rows_of(EventType::Admission)
            .into_iter()
            .filter(|(t, _)| inside(*t))
            .map(|_| 1.0)
            .collect(),
        KpiType::Revenue | KpiType::Costs => {
            let t = if kpi == KpiType::Revenue {
                EventType::BillingCharge
            } else {
                EventType::CostEntry
            };
            ep.rows_of(t)
                .into_iter()
                .filter(|(ts, _)| inside(*ts))
                .map(|(_, c)| c as f64)
                .collect()
        }
        _ => vec![],
    }
}

fn plan_classes() -> Vec<String> {
    vec!["antibiotic".to_string()]
}

fn reduce(kpi: KpiType, xs: &[f64], capacity: u32, bucket_ms: i64) -> Cell {
    let n = xs.len() as u64;
    let sum: f64 = xs.iter().sum();
    let value = match kpi {
        KpiType::OccupancyRate => Some(sum / (capacity as f64 * bucket_ms as f64)),
        KpiType::AdmissionCount => Some(sum),
        KpiType::Revenue | KpiType::Costs => Some(sum / 100.0),
        _ if xs.is_empty() => None,
        KpiType::ContributionMargin => Some(sum / 100.0 / n as f64),
        KpiType::SepsisDoorToAntibiotic => {
            let mut v = xs.to_vec();
            v.sort_by(f64::total_cmp);
            let m = v.len() / 2;
            Some(if v.len() % 2 == 0 { (v[m - 1] + v[m]) / 2.0 } else { v[m] })
        }
        _ => Some(sum / n as f64),
    };
    Cell { value, n }
}

fn series(plan: &Plan, kpi: KpiType, bucket: Bucket, group_by: &[GroupField], data_end: Option<DateTime<Utc>>) -> TruthSeries {
    let (from, to) = plan.spec.window();
    let cap = plan.spec.bed_capacity;
    let rows = buckets(from, to, bucket)
        .into_iter()
        .map(|(bs, be)| {
            let ms = (be - bs).num_milliseconds();
            let mut by_key: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            let mut all = Vec::new();
            for ep in &plan.episodes {
                let xs = contributions(plan, ep, kpi, (bs, be), data_end);
                if xs.is_empty() {
                    continue;
                }
                all.extend_from_slice(&xs);
                by_key.entry(stratum(plan, ep, group_by)).or_default().extend(xs);
            }
            let total = reduce(kpi, &all, cap, ms);
            let mut strata: BTreeMap<String, Cell> = by_key
                .iter()
                .map(|(k, xs)| (k.clone(), reduce(kpi, xs, cap, ms)))
                .collect();
            if group_by.is_empty() {
                strata.insert("all".into(), total);
            }
            BucketRow {
                bucket_start: bs,
                bucket_end: be,
                value: total.value,
                n: total.n,
                strata,
            }
        })
        .collect();
    TruthSeries {
        kpi,
        bucket,
        group_by: group_by.to_vec(),
        buckets: rows,
    }
}

pub(crate) fn ground_truth(plan: &Plan) -> GroundTruth {
    let data_end = plan
        .episodes
        .iter()
        .flat_map(|e| e.rows.iter().map(|r| r.ts))
        .max();
    let mut episodes: Vec<TruthEpisode> = plan
        .episodes
        .iter()
        .map(|e| TruthEpisode {
            patient_id: plan.patients[e.patient].id.clone(),
            event_ids: e.event_ids(),
        })
        .collect();
    episodes.sort_by(|a, b| a.event_ids.cmp(&b.event_ids));
    let mut out = Vec::new();
    for kpi in KpiType::ALL {
        for bucket in [Bucket::Day, Bucket::Week, Bucket::Month] {
            for mask in 0..8u8 {
                let gb: Vec<GroupField> = [GroupField::Gender, GroupField::AgeBand, GroupField::Department]
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, g)| g)
                    .collect();
                out.push(series(plan, kpi, bucket, &gb, data_end));
            }
        }
    }
    let (window_from, window_to) = plan.spec.window();
    GroundTruth {
        window_from,
        window_to,
        bed_capacity: plan.spec.bed_capacity,
        antibiotic_classes: plan_classes(),
        data_end,
        episodes,
        series: out,
    }
}
