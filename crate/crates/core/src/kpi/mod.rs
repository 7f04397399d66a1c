//! KPI processor: bucketed, stratified KPI series computed on demand from a
//! repository snapshot, cohort-vs-hospital comparison, tracked targets and
//! linear forecasts.

mod compute;
mod forecast;
mod tracked;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{self, FilterAst, FilterError};

pub use compute::{compare_to_average, compute_kpi, Comparison};
pub use forecast::{data_months, forecast, ols, project, ForecastPoint, ForecastResult, MIN_HISTORY};
pub use tracked::{evaluate_tracked, latest_complete_month, Direction, TrackedItem, TrackedStatus, TrackStatus};

pub const MAX_BUCKETS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KpiError {
    #[error("invalid filter: {0}")]
    Filter(#[from] FilterError),
    #[error("unknown cohort {0:?}")]
    UnknownCohort(String),
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error("forecast needs at least {needed} non-absent history buckets, found {found}")]
    InsufficientHistory { needed: usize, found: usize },
}

/// Inputs that come from configuration rather than from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiContext {
    pub bed_capacity: u32,
    pub antibiotic_classes: Vec<String>,
}

impl Default for KpiContext {
    fn default() -> Self {
        KpiContext {
            bed_capacity: 100,
            antibiotic_classes: vec!["antibiotic".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KpiType {
    #[serde(rename = "OCCUPANCY_RATE")]
    OccupancyRate,
    #[serde(rename = "AVG_LOS")]
    AvgLos,
    #[serde(rename = "MORTALITY_RATE")]
    MortalityRate,
    #[serde(rename = "READMISSION_30D")]
    Readmission30d,
    #[serde(rename = "CONTRIBUTION_MARGIN")]
    ContributionMargin,
    #[serde(rename = "SEPSIS_DOOR_TO_ANTIBIOTIC")]
    SepsisDoorToAntibiotic,
    #[serde(rename = "ADMISSION_COUNT")]
    AdmissionCount,
    #[serde(rename = "REVENUE")]
    Revenue,
    #[serde(rename = "COSTS")]
    Costs,
}

/// Range projected values are clamped to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidRange {
    Unit,
    NonNegative,
    Unbounded,
}

impl ValidRange {
    pub fn clamp(self, v: f64) -> f64 {
        match self {
            ValidRange::Unit => v.clamp(0.0, 1.0),
            ValidRange::NonNegative => v.max(0.0),
            ValidRange::Unbounded => v,
        }
    }

    pub fn bounds(self) -> [Option<f64>; 2] {
        match self {
            ValidRange::Unit => [Some(0.0), Some(1.0)],
            ValidRange::NonNegative => [Some(0.0), None],
            ValidRange::Unbounded => [None, None],
        }
    }
}

impl KpiType {
    pub const ALL: [KpiType; 9] = [
        KpiType::OccupancyRate,
        KpiType::AvgLos,
        KpiType::MortalityRate,
        KpiType::Readmission30d,
        KpiType::ContributionMargin,
        KpiType::SepsisDoorToAntibiotic,
        KpiType::AdmissionCount,
        KpiType::Revenue,
        KpiType::Costs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KpiType::OccupancyRate => "OCCUPANCY_RATE",
            KpiType::AvgLos => "AVG_LOS",
            KpiType::MortalityRate => "MORTALITY_RATE",
            KpiType::Readmission30d => "READMISSION_30D",
            KpiType::ContributionMargin => "CONTRIBUTION_MARGIN",
            KpiType::SepsisDoorToAntibiotic => "SEPSIS_DOOR_TO_ANTIBIOTIC",
            KpiType::AdmissionCount => "ADMISSION_COUNT",
            KpiType::Revenue => "REVENUE",
            KpiType::Costs => "COSTS",
        }
    }

    pub fn valid_range(self) -> ValidRange {
        match self {
            KpiType::OccupancyRate | KpiType::MortalityRate | KpiType::Readmission30d => {
                ValidRange::Unit
            }
            KpiType::ContributionMargin => ValidRange::Unbounded,
            _ => ValidRange::NonNegative,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            KpiType::OccupancyRate | KpiType::MortalityRate | KpiType::Readmission30d => "ratio",
            KpiType::AvgLos => "days",
            KpiType::SepsisDoorToAntibiotic => "minutes",
            KpiType::AdmissionCount => "count",
            KpiType::ContributionMargin | KpiType::Revenue | KpiType::Costs => "currency",
        }
    }

    pub fn formula_doc(self) -> &'static str {
        match self {
            KpiType::OccupancyRate => "Occupied bed-hours of inpatient episodes inside the bucket (stay [admission, discharge), open stays run to the bucket end) divided by bed_capacity times the bucket hours.",
            KpiType::AvgLos => "Mean length of stay in days over inpatient episodes discharged in the bucket.",
            KpiType::MortalityRate => "Inpatient episodes with a DEATH event divided by inpatient episodes discharged in the bucket.",
            KpiType::Readmission30d => "Inpatient episodes discharged in the bucket followed by a same-patient ADMISSION within 30 days, divided by those discharges; discharges less than 30 days before the end of the data are excluded.",
            KpiType::ContributionMargin => "Mean of total charges minus total costs over closed episodes discharged in the bucket.",
            KpiType::SepsisDoorToAntibiotic => "Median minutes from an episode's first SEPSIS_FLAG to the first later MEDICATION_ADMIN of an antibiotic class, attributed to the flag's bucket.",
            KpiType::AdmissionCount => "Number of ADMISSION events in the bucket.",
            KpiType::Revenue => "Sum of BILLING_CHARGE amounts posted in the bucket.",
            KpiType::Costs => "Sum of COST_ENTRY amounts posted in the bucket.",
        }
    }
}

impl fmt::Display for KpiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KpiType {
    type Err = KpiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KpiType::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| KpiError::Invalid(format!("unknown KPI type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiDescriptor {
    pub id: KpiType,
    pub unit: String,
    pub valid_range: [Option<f64>; 2],
    pub formula_doc: String,
}

pub fn descriptors() -> Vec<KpiDescriptor> {
    KpiType::ALL
        .into_iter()
        .map(|k| KpiDescriptor {
            id: k,
            unit: k.unit().into(),
            valid_range: k.valid_range().bounds(),
            formula_doc: k.formula_doc().into(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Bucket {
    Day,
    Week,
    Month,
}

impl Bucket {
    /// Start of the calendar bucket following the one containing `t`.
    /// Weeks start on Monday, all boundaries at 00:00 UTC.
    pub fn next_boundary(self, t: DateTime<Utc>) -> DateTime<Utc> {
        let d = t.date_naive();
        let next = match self {
            Bucket::Day => d + Duration::days(1),
            Bucket::Week => d + Duration::days(7 - d.weekday().num_days_from_monday() as i64),
            Bucket::Month => {
                NaiveDate::from_ymd_opt(d.year(), d.month(), 1).unwrap() + Months::new(1)
            }
        };
        Utc.from_utc_datetime(&next.and_hms_opt(0, 0, 0).unwrap())
    }
}

impl FromStr for Bucket {
    type Err = KpiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DAY" => Ok(Bucket::Day),
            "WEEK" => Ok(Bucket::Week),
            "MONTH" => Ok(Bucket::Month),
            _ => Err(KpiError::Invalid(format!("unknown bucket {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupField {
    Gender,
    AgeBand,
    Department,
}

impl GroupField {
    pub const ALL: [GroupField; 3] = [GroupField::Gender, GroupField::AgeBand, GroupField::Department];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupField::Gender => "gender",
            GroupField::AgeBand => "age_band",
            GroupField::Department => "department",
        }
    }
}

impl FromStr for GroupField {
    type Err = KpiError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GroupField::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| KpiError::Invalid(format!("unknown group_by field {s:?}")))
    }
}

/// Every subset of the group-by fields, in canonical field order.
pub fn group_by_subsets() -> Vec<Vec<GroupField>> {
    (0..8u8)
        .map(|mask| {
            GroupField::ALL
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, g)| g)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiQuery {
    pub kpi: KpiType,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
    pub bucket: Bucket,
    #[serde(default)]
    pub group_by: Vec<GroupField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<String>,
}

impl KpiQuery {
    pub fn new(kpi: KpiType, from: DateTime<Utc>, to: DateTime<Utc>, bucket: Bucket) -> Self {
        KpiQuery {
            kpi,
            from,
            to,
            bucket,
            group_by: Vec::new(),
            filter: None,
            cohort: None,
        }
    }

    /// Checks the window and group-by fields and parses the filter.
    pub fn validate(&self) -> Result<Option<FilterAst>, KpiError> {
        if self.from >= self.to {
            return Err(KpiError::Invalid(format!(
                "from ({}) must be before to ({})",
                self.from, self.to
            )));
        }
        for (i, g) in self.group_by.iter().enumerate() {
            if self.group_by[..i].contains(g) {
                return Err(KpiError::Invalid(format!(
                    "group_by field {} listed twice",
                    g.as_str()
                )));
            }
        }
        match self.filter.as_deref() {
            Some(text) if !text.trim().is_empty() => Ok(Some(filter::parse(text)?)),
            _ => Ok(None),
        }
    }
}

/// Bucket boundaries covering `[from, to)`: calendar-aligned, with the first
/// bucket starting at `from` and the last ending at `to`.
pub fn bucket_bounds(
    from: DateTime<Utc>,
    to: DateTime<Utc>,
    bucket: Bucket,
) -> Result<Vec<(DateTime<Utc>, DateTime<Utc>)>, KpiError> {
    let mut out = Vec::new();
    let mut start = from;
    while start < to {
        if out.len() == MAX_BUCKETS {
            return Err(KpiError::Invalid(format!(
                "query spans more than {MAX_BUCKETS} buckets"
            )));
        }
        let end = bucket.next_boundary(start).min(to);
        out.push((start, end));
        start = end;
    }
    Ok(out)
}

/// Value and population of one stratum in one bucket. `value` is absent
/// (null) when the KPI's denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket_start: DateTime<Utc>,
    pub bucket_end: DateTime<Utc>,
    /// Value over all strata combined.
    pub value: Option<f64>,
    pub n: u64,
    pub strata: std::collections::BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSeries {
    pub query: KpiQuery,
    pub buckets: Vec<BucketRow>,
}
