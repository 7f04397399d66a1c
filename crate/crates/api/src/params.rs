//! Query-string decoding shared by the HTTP handlers and the CLI.

use std::str::FromStr;

use chrono::{DateTime, Utc};
use eoc_core::kpi::{Bucket, GroupField, KpiQuery, KpiType};

use crate::error::ApiError;

/// Decoded query-string pairs. Repeated names keep every value; single-valued
/// lookups take the last one.
#[derive(Debug, Clone, Default)]
pub struct Params(pub Vec<(String, String)>);

impl Params {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Non-empty value of `name`, treating an empty string as absent.
    pub fn text(&self, name: &str) -> Option<&str> {
        self.get(name).map(str::trim).filter(|v| !v.is_empty())
    }

    /// Filter text exactly as sent, so error offsets point into it.
    pub fn filter(&self) -> Option<&str> {
        self.get("filter").filter(|v| !v.trim().is_empty())
    }

    pub fn parse<T: FromStr>(&self, name: &str) -> Result<Option<T>, ApiError>
    where
        T::Err: std::fmt::Display,
    {
        self.text(name)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| ApiError::bad_request(format!("parameter {name}: {e}")))
            })
            .transpose()
    }

    pub fn required<T: FromStr>(&self, name: &str) -> Result<T, ApiError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(name)?
            .ok_or_else(|| ApiError::bad_request(format!("missing parameter {name}")))
    }

    /// RFC-3339 instant.
    pub fn instant(&self, name: &str) -> Result<Option<DateTime<Utc>>, ApiError> {
        self.text(name)
            .map(|v| {
                DateTime::parse_from_rfc3339(v)
                    .map(|t| t.with_timezone(&Utc))
                    .map_err(|e| ApiError::bad_request(format!("parameter {name}: {e} (expected RFC-3339)")))
            })
            .transpose()
    }

    pub fn flag(&self, name: &str) -> Result<bool, ApiError> {
        match self.text(name) {
            None | Some("false") | Some("0") => Ok(false),
            Some("true") | Some("1") => Ok(true),
            Some(v) => Err(ApiError::bad_request(format!("parameter {name}: expected true or false, got {v:?}"))),
        }
    }

    /// Group-by fields, comma separated and/or repeated.
    pub fn group_by(&self) -> Result<Vec<GroupField>, ApiError> {
        self.0
            .iter()
            .filter(|(k, _)| k == "group_by")
            .flat_map(|(_, v)| v.split(','))
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(|v| GroupField::from_str(v).map_err(|e| ApiError::bad_request(e.to_string())))
            .collect()
    }
}

impl From<Vec<(String, String)>> for Params {
    fn from(v: Vec<(String, String)>) -> Self {
        Params(v)
    }
}

pub fn kpi_type(s: &str) -> Result<KpiType, ApiError> {
    KpiType::from_str(s).map_err(|_| ApiError::not_found("unknown_kpi", format!("unknown KPI type {s:?}")))
}

/// Builds a KPI query from `from`, `to`, `bucket` (default MONTH),
/// `group_by`, `filter` and `cohort`. A missing window falls back to
/// `default_window` when given.
pub fn kpi_query(
    kpi: KpiType,
    p: &Params,
    default_window: Option<(DateTime<Utc>, DateTime<Utc>)>,
) -> Result<KpiQuery, ApiError> {
    let window = |name: &str, fallback: Option<DateTime<Utc>>| -> Result<DateTime<Utc>, ApiError> {
        p.instant(name)?
            .or(fallback)
            .ok_or_else(|| ApiError::bad_request(format!("missing parameter {name}")))
    };
    let from = window("from", default_window.map(|w| w.0))?;
    let to = window("to", default_window.map(|w| w.1))?;
    let mut q = KpiQuery::new(kpi, from, to, p.parse::<Bucket>("bucket")?.unwrap_or(Bucket::Month));
    q.group_by = p.group_by()?;
    q.filter = p.filter().map(String::from);
    q.cohort = p.text("cohort").map(String::from);
    Ok(q)
}
