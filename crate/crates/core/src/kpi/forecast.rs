use chrono::{DateTime, Months, Utc};
use serde::{Deserialize, Serialize};

use super::{compute_kpi, Bucket, KpiContext, KpiError, KpiQuery, KpiType, ValidRange};
use crate::classify::CohortRegistry;
use crate::store::Snapshot;

pub const MIN_HISTORY: usize = 3;
pub const METHOD: &str = "OLS_LINEAR";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub bucket_start: DateTime<Utc>,
    /// Position on the regression axis; the first history bucket is 0.
    pub index: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub kpi: KpiType,
    pub method: String,
    pub scenario_multiplier: f64,
    pub slope: f64,
    pub intercept: f64,
    pub history: Vec<ForecastPoint>,
    pub projected: Vec<ForecastPoint>,
}

/// Least-squares line `y = intercept + slope * x`, fitted on centered data.
/// Returns `None` for fewer than two points or when all x are equal.
pub fn ols(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Values of the fitted line at `last_index + 1 ..= last_index + horizon`,
/// scaled by the scenario multiplier and clamped to the valid range.
pub fn project(
    slope: f64,
    intercept: f64,
    last_index: u32,
    horizon: u32,
    multiplier: f64,
    range: ValidRange,
) -> Vec<(u32, f64)> {
    (1..=horizon)
        .map(|h| {
            let x = last_index + h;
            (x, range.clamp((intercept + slope * x as f64) * multiplier))
        })
        .collect()
}

/// Whole calendar months covering the stored data, from the month of the
/// earliest event up to the end of the month holding the latest one.
pub fn data_months(snap: &Snapshot) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
    let first = snap.min_event_time()?;
    let last = snap.max_event_time()?;
    let from = Bucket::Month.next_boundary(first) - Months::new(1);
    Some((from, Bucket::Month.next_boundary(last)))
}

/// Fits the monthly history of `q` and projects `horizon` months ahead.
/// The query's bucket is forced to MONTH; it must not be stratified.
pub fn forecast(
    snap: &Snapshot,
    cohorts: &CohortRegistry,
    ctx: &KpiContext,
    q: &KpiQuery,
    horizon: u32,
    multiplier: f64,
) -> Result<ForecastResult, KpiError> {
    if horizon < 1 {
        return Err(KpiError::Invalid("horizon must be at least 1".into()));
    }
    if !multiplier.is_finite() {
        return Err(KpiError::Invalid("scenario multiplier must be finite".into()));
    }
    if !q.group_by.is_empty() {
        return Err(KpiError::Invalid("forecasts are not stratified".into()));
    }
    let mut q = q.clone();
    q.bucket = Bucket::Month;
    let series = compute_kpi(snap, cohorts, ctx, &q)?;
    let history: Vec<ForecastPoint> = series
        .buckets
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            b.value.map(|value| ForecastPoint {
                bucket_start: b.bucket_start,
                index: i as u32,
                value,
            })
        })
        .collect();
    if history.len() < MIN_HISTORY {
        return Err(KpiError::InsufficientHistory {
            needed: MIN_HISTORY,
            found: history.len(),
        });
    }
    let pts: Vec<(f64, f64)> = history.iter().map(|p| (p.index as f64, p.value)).collect();
    let (slope, intercept) = ols(&pts).expect("three distinct x values");
    let last = series.buckets.len() as u32 - 1;
    let last_start = series.buckets.last().unwrap().bucket_start;
    let month_start = Bucket::Month.next_boundary(last_start) - Months::new(1);
    let projected = project(slope, intercept, last, horizon, multiplier, q.kpi.valid_range())
        .into_iter()
        .map(|(x, value)| {
            if !value.is_finite() {
                return Err(KpiError::Invalid("projection is not finite".into()));
            }
            Ok(ForecastPoint {
                bucket_start: month_start + Months::new(x - last),
                index: x,
                value,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ForecastResult {
        kpi: q.kpi,
        method: METHOD.into(),
        scenario_multiplier: multiplier,
        slope,
        intercept,
        history,
        projected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(ys: &[f64]) -> (f64, f64) {
        let pts: Vec<_> = ys.iter().enumerate().map(|(i, y)| (i as f64, *y)).collect();
        ols(&pts).unwrap()
    }

    #[test]
    fn exact_line_projects_forward() {
        let (b, a) = line(&[100.0, 110.0, 120.0, 130.0]);
        let p = project(b, a, 3, 2, 1.0, ValidRange::NonNegative);
        assert!((p[0].1 - 140.0).abs() < 1e-9 && (p[1].1 - 150.0).abs() < 1e-9);
        let p = project(b, a, 3, 2, 1.1, ValidRange::NonNegative);
        assert!((p[0].1 - 154.0).abs() < 1e-9 && (p[1].1 - 165.0).abs() < 1e-9);
    }

    #[test]
    fn projections_are_clamped() {
        let (b, a) = line(&[0.5, 0.7, 0.9]);
        let p = project(b, a, 2, 3, 1.0, ValidRange::Unit);
        assert_eq!(p.iter().map(|x| x.1).collect::<Vec<_>>(), vec![1.0, 1.0, 1.0]);
        let (b, a) = line(&[3.0, 2.0, 1.0]);
        assert_eq!(project(b, a, 2, 3, 1.0, ValidRange::NonNegative)[2].1, 0.0);
        assert_eq!(project(b, a, 2, 3, 1.0, ValidRange::Unbounded)[2].1, -2.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(ols(&[(1.0, 2.0)]), None);
        assert_eq!(ols(&[(1.0, 2.0), (1.0, 3.0)]), None);
    }
}
