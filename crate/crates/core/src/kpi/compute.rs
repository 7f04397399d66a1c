use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{bucket_bounds, BucketRow, Cell, GroupField, KpiContext, KpiError, KpiQuery, KpiSeries, KpiType};
use crate::classify::CohortRegistry;
use crate::filter::evaluate;
use crate::model::{age_band, EpisodeOfCare, EventType};
use crate::store::Snapshot;

const ALL: &str = "all";
const UNKNOWN: &str = "unknown";
const READMISSION_WINDOW_DAYS: i64 = 30;

#[derive(Debug, Clone, Default)]
enum Acc {
    #[default]
    Empty,
    Ratio { hits: u64, n: u64 },
    Mean { sum: f64, n: u64 },
    Cents { sum: i64, n: u64 },
    Samples(Vec<f64>),
    Count(u64),
    Occupied { ms: i64, n: u64 },
}

impl Acc {
    fn n(&self) -> u64 {
        match self {
            Acc::Empty => 0,
            Acc::Ratio { n, .. } | Acc::Mean { n, .. } | Acc::Cents { n, .. } | Acc::Occupied { n, .. } => *n,
            Acc::Samples(v) => v.len() as u64,
            Acc::Count(n) => *n,
        }
    }
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

fn finish(kpi: KpiType, acc: &Acc, capacity: u32, bucket_ms: i64) -> Cell {
    let n = acc.n();
    let value = match (kpi, acc) {
        (_, Acc::Ratio { hits, n }) => (*n > 0).then(|| *hits as f64 / *n as f64),
        (_, Acc::Mean { sum, n }) => (*n > 0).then(|| sum / *n as f64),
        (KpiType::ContributionMargin, Acc::Cents { sum, n }) => {
            (*n > 0).then(|| *sum as f64 / 100.0 / *n as f64)
        }
        (_, Acc::Cents { sum, .. }) => Some(*sum as f64 / 100.0),
        (_, Acc::Samples(v)) => median(&mut v.clone()),
        (_, Acc::Count(c)) => Some(*c as f64),
        (_, Acc::Occupied { ms, .. }) => Some(*ms as f64 / (capacity as f64 * bucket_ms as f64)),
        (k, Acc::Empty) => match k {
            KpiType::OccupancyRate | KpiType::AdmissionCount | KpiType::Revenue | KpiType::Costs => {
                Some(0.0)
            }
            _ => None,
        },
    };
    Cell { value, n }
}

fn stratum_key(group_by: &[GroupField], e: &EpisodeOfCare, snap: &Snapshot) -> String {
    if group_by.is_empty() {
        return ALL.into();
    }
    let patient = snap.patient(&e.patient_id);
    group_by
        .iter()
        .map(|g| {
            let v = match g {
                GroupField::Gender => patient.map_or(UNKNOWN, |p| p.gender.as_str()),
                GroupField::AgeBand => match (patient, e.admission_time) {
                    (Some(p), Some(at)) => age_band(p.age_at(at)),
                    _ => UNKNOWN,
                },
                GroupField::Department => e.primary_department.as_deref().unwrap_or(UNKNOWN),
            };
            format!("{}={v}", g.as_str())
        })
        .collect::<Vec<_>>()
        .join("|")
}

struct Grid {
    bounds: Vec<(DateTime<Utc>, DateTime<Utc>)>,
    cells: Vec<BTreeMap<String, Acc>>,
    totals: Vec<Acc>,
}

impl Grid {
    fn new(bounds: Vec<(DateTime<Utc>, DateTime<Utc>)>) -> Self {
        let n = bounds.len();
        Grid {
            bounds,
            cells: vec![BTreeMap::new(); n],
            totals: vec![Acc::Empty; n],
        }
    }

    fn index(&self, t: DateTime<Utc>) -> Option<usize> {
        let i = self.bounds.partition_point(|(_, end)| *end <= t);
        (i < self.bounds.len() && self.bounds[i].0 <= t).then_some(i)
    }

    fn add(&mut self, i: usize, key: &str, f: impl Fn(&mut Acc)) {
        f(self.cells[i].entry(key.to_string()).or_default());
        f(&mut self.totals[i]);
    }
}

fn ratio(hit: bool) -> impl Fn(&mut Acc) {
    move |a| match a {
        Acc::Ratio { hits, n } => {
            *hits += hit as u64;
            *n += 1;
        }
        _ => *a = Acc::Ratio { hits: hit as u64, n: 1 },
    }
}

fn mean(x: f64) -> impl Fn(&mut Acc) {
    move |a| match a {
        Acc::Mean { sum, n } => {
            *sum += x;
            *n += 1;
        }
        _ => *a = Acc::Mean { sum: x, n: 1 },
    }
}

fn cents(c: i64) -> impl Fn(&mut Acc) {
    move |a| match a {
        Acc::Cents { sum, n } => {
            *sum += c;
            *n += 1;
        }
        _ => *a = Acc::Cents { sum: c, n: 1 },
    }
}

fn sample(x: f64) -> impl Fn(&mut Acc) {
    move |a| match a {
        Acc::Samples(v) => v.push(x),
        _ => *a = Acc::Samples(vec![x]),
    }
}

fn count(a: &mut Acc) {
    match a {
        Acc::Count(n) => *n += 1,
        _ => *a = Acc::Count(1),
    }
}

fn occupied(ms: i64) -> impl Fn(&mut Acc) {
    move |a| match a {
        Acc::Occupied { ms: total, n } => {
            *total += ms;
            *n += 1;
        }
        _ => *a = Acc::Occupied { ms, n: 1 },
    }
}

/// Minutes from the first sepsis flag to the first antibiotic given at or
/// after it, with the flag time.
pub(crate) fn door_to_antibiotic(
    e: &EpisodeOfCare,
    classes: &[String],
) -> Option<(DateTime<Utc>, f64)> {
    let flag = e
        .events
        .iter()
        .find(|ev| ev.event_type == EventType::SepsisFlag)?
        .timestamp;
    let given = e
        .events
        .iter()
        .find(|ev| {
            ev.event_type == EventType::MedicationAdmin
                && ev.timestamp >= flag
                && ev
                    .attr_str("class")
                    .is_some_and(|c| classes.iter().any(|k| k == c))
        })?
        .timestamp;
    Some((flag, (given - flag).num_milliseconds() as f64 / 60_000.0))
}

fn population(
    snap: &Snapshot,
    cohorts: &CohortRegistry,
    q: &KpiQuery,
) -> Result<Vec<Arc<EpisodeOfCare>>, KpiError> {
    let ast = q.validate()?;
    if let Some(c) = &q.cohort {
        if !cohorts.is_known(c) {
            return Err(KpiError::UnknownCohort(c.clone()));
        }
    }
    Ok(snap
        .all_episodes()
        .into_iter()
        .filter(|e| q.cohort.as_ref().is_none_or(|c| e.cohort_labels.contains(c)))
        .filter(|e| {
            ast.as_ref()
                .is_none_or(|f| evaluate(f, e, snap.patient(&e.patient_id)))
        })
        .collect())
}

/// Computes a KPI series against one repository snapshot.
pub fn compute_kpi(
    snap: &Snapshot,
    cohorts: &CohortRegistry,
    ctx: &KpiContext,
    q: &KpiQuery,
) -> Result<KpiSeries, KpiError> {
    let episodes = population(snap, cohorts, q)?;
    let mut grid = Grid::new(bucket_bounds(q.from, q.to, q.bucket)?);
    let data_end = snap.max_event_time();
    let mut admissions: HashMap<String, Vec<DateTime<Utc>>> = HashMap::new();

    for e in &episodes {
        let key = stratum_key(&q.group_by, e, snap);
        let discharged_in = e.discharge_time.and_then(|d| grid.index(d));
        match q.kpi {
            KpiType::OccupancyRate => {
                let Some(adm) = e.admission_time.filter(|_| e.is_inpatient()) else {
                    continue;
                };
                for i in 0..grid.bounds.len() {
                    let (bs, be) = grid.bounds[i];
                    let end = e.discharge_time.map_or(be, |d| d.min(be));
                    let ms = (end - adm.max(bs)).num_milliseconds();
                    if ms > 0 {
                        grid.add(i, &key, occupied(ms));
                    }
                }
            }
            KpiType::AvgLos => {
                if let (Some(i), Some(los), true) = (discharged_in, e.los(), e.is_inpatient()) {
                    grid.add(i, &key, mean(los));
                }
            }
            KpiType::MortalityRate => {
                if let (Some(i), true) = (discharged_in, e.is_inpatient()) {
                    grid.add(i, &key, ratio(e.derived.died));
                }
            }
            KpiType::Readmission30d => {
                let (Some(i), Some(d), true) = (discharged_in, e.discharge_time, e.is_inpatient())
                else {
                    continue;
                };
                let horizon = d + Duration::days(READMISSION_WINDOW_DAYS);
                if data_end.is_none_or(|end| horizon > end) {
                    continue;
                }
                let adms = admissions.entry(e.patient_id.clone()).or_insert_with(|| {
                    snap.scan_events(&e.patient_id)
                        .into_iter()
                        .filter(|ev| ev.event_type == EventType::Admission)
                        .map(|ev| ev.timestamp)
                        .collect()
                });
                let readmitted = adms.iter().any(|&t| t > d && t <= horizon);
                grid.add(i, &key, ratio(readmitted));
            }
            KpiType::ContributionMargin => {
                if let Some(i) = discharged_in {
                    grid.add(i, &key, cents(e.derived.contribution_margin.cents()));
                }
            }
            KpiType::SepsisDoorToAntibiotic => {
                if let Some((flag, minutes)) = door_to_antibiotic(e, &ctx.antibiotic_classes) {
                    if let Some(i) = grid.index(flag) {
                        grid.add(i, &key, sample(minutes));
                    }
                }
            }
            KpiType::AdmissionCount | KpiType::Revenue | KpiType::Costs => {
                let wanted = match q.kpi {
                    KpiType::AdmissionCount => EventType::Admission,
                    KpiType::Revenue => EventType::BillingCharge,
                    _ => EventType::CostEntry,
                };
                for ev in e.events.iter().filter(|ev| ev.event_type == wanted) {
                    let Some(i) = grid.index(ev.timestamp) else {
                        continue;
                    };
                    match ev.amount {
                        Some(m) if q.kpi != KpiType::AdmissionCount => {
                            grid.add(i, &key, cents(m.cents()))
                        }
                        _ => grid.add(i, &key, count),
                    }
                }
            }
        }
    }

    let buckets = grid
        .bounds
        .iter()
        .zip(grid.cells)
        .zip(&grid.totals)
        .map(|((&(bs, be), cells), total)| {
            let ms = (be - bs).num_milliseconds();
            let mut strata: BTreeMap<String, Cell> = cells
                .iter()
                .map(|(k, acc)| (k.clone(), finish(q.kpi, acc, ctx.bed_capacity, ms)))
                .collect();
            let all = finish(q.kpi, total, ctx.bed_capacity, ms);
            if q.group_by.is_empty() {
                strata.insert(ALL.into(), all);
            }
            BucketRow {
                bucket_start: bs,
                bucket_end: be,
                value: all.value,
                n: all.n,
                strata,
            }
        })
        .collect();
    Ok(KpiSeries {
        query: q.clone(),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cohort: KpiSeries,
    pub hospital: KpiSeries,
}

/// The cohort's series next to the hospital average: the same query with the
/// cohort and filter cleared.
pub fn compare_to_average(
    snap: &Snapshot,
    cohorts: &CohortRegistry,
    ctx: &KpiContext,
    q: &KpiQuery,
) -> Result<Comparison, KpiError> {
    if q.cohort.is_none() {
        return Err(KpiError::Invalid("comparison needs a cohort".into()));
    }
    let cohort = compute_kpi(snap, cohorts, ctx, q)?;
    let mut hq = q.clone();
    hq.cohort = None;
    hq.filter = None;
    let hospital = compute_kpi(snap, cohorts, ctx, &hq)?;
    Ok(Comparison { cohort, hospital })
}
