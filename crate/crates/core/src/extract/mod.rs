//! Source extraction: reads heterogeneous raw files, normalizes their rows
//! into canonical events and loads them incrementally into the repository.
//!
//! Each source carries a watermark, the latest timestamp among its good
//! records. A load reads only records strictly newer than the watermark and
//! advances it after the records are durably stored and linked. Rows that
//! cannot be normalized are quarantined in `rejects-<source_id>.jsonl` under
//! the repository root.

pub mod profile;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::builder::{apply_increment, rebuild_all, BuildReport, LinkagePolicy};
use crate::model::{make_event_id, to_canonical_string, AttrValue, Event, Money, Patient};
use crate::store::{Repository, Watermark};

pub use profile::{
    builtin_profiles, MappingProfile, SourceConfig, SourceFormat, SourceKind, TimeFormat,
};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("source file {0} not found")]
    MissingSource(PathBuf),
    #[error("i/o error reading {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid CSV header in {path}: {message}")]
    Header { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub source_id: String,
    pub native_key: String,
    pub raw: BTreeMap<String, String>,
    pub source_timestamp: DateTime<Utc>,
    /// 1-based line of the record in its file.
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub source_id: String,
    pub line: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_key: Option<String>,
    pub reason: String,
    #[serde(default)]
    pub raw: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceRead {
    pub records: Vec<SourceRecord>,
    pub rejected: Vec<Rejection>,
}

/// A normalized record: one event plus the demographics it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub event: Event,
    pub patient: Option<Patient>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExtractError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            ExtractError::MissingSource(path.to_path_buf())
        } else {
            ExtractError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn non_empty<'a>(raw: &'a BTreeMap<String, String>, field: &str) -> Option<&'a str> {
    raw.get(field).map(|s| s.trim()).filter(|s| !s.is_empty())
}

fn raw_rows(cfg: &SourceConfig) -> Result<Vec<Result<(u64, BTreeMap<String, String>), (u64, String)>>, ExtractError> {
    let path = cfg.path.as_path();
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    match cfg.format {
        SourceFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
            let headers = reader
                .headers()
                .map_err(|e| ExtractError::Header {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?
                .clone();
            for rec in reader.records() {
                match rec {
                    Ok(r) => {
                        let line = r.position().map_or(0, |p| p.line());
                        let map = headers
                            .iter()
                            .zip(r.iter())
                            .map(|(h, v)| (h.to_string(), v.to_string()))
                            .collect();
                        rows.push(Ok((line, map)));
                    }
                    Err(e) => {
                        if let csv::ErrorKind::Io(_) = e.kind() {
                            return Err(ExtractError::Io {
                                path: path.to_path_buf(),
                                source: io::Error::other(e.to_string()),
                            });
                        }
                        let line = e.position().map_or(0, |p| p.line());
                        rows.push(Err((line, format!("malformed CSV row: {e}"))));
                    }
                }
            }
        }
        SourceFormat::Jsonl => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line_no = i as u64 + 1;
                let text = line.map_err(io_err(path))?;
                if text.trim().is_empty() {
                    continue;
                }
                rows.push(flatten_json(&text).map(|m| (line_no, m)).map_err(|e| (line_no, e)));
            }
        }
    }
    Ok(rows)
}

fn flatten_json(text: &str) -> Result<BTreeMap<String, String>, String> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| format!("malformed JSON line: {e}"))?;
    let serde_json::Value::Object(obj) = value else {
        return Err("JSON line is not an object".into());
    };
    let mut out = BTreeMap::new();
    for (k, v) in obj {
        let s = match v {
            serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s,
            serde_json::Value::Bool(b) => b.to_string(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => return Err(format!("field {k:?} is not a scalar")),
        };
        out.insert(k, s);
    }
    Ok(out)
}

/// Records of a source newer than `since`, ordered by source timestamp.
/// Rows without a key or a parseable timestamp are returned as rejections.
pub fn read_source(
    cfg: &SourceConfig,
    profile: &MappingProfile,
    since: Watermark,
) -> Result<SourceRead, ExtractError> {
    let mut out = SourceRead::default();
    for row in raw_rows(cfg)? {
        let (line, raw) = match row {
            Ok(r) => r,
            Err((line, reason)) => {
                out.rejected.push(Rejection {
                    source_id: cfg.source_id.clone(),
                    line,
                    native_key: None,
                    reason,
                    raw: BTreeMap::new(),
                });
                continue;
            }
        };
        let native_key = non_empty(&raw, &profile.key).map(str::to_string);
        let reject = |reason: String, raw: BTreeMap<String, String>| Rejection {
            source_id: cfg.source_id.clone(),
            line,
            native_key: native_key.clone(),
            reason,
            raw,
        };
        let Some(key) = native_key.clone() else {
            out.rejected
                .push(reject(format!("missing required field {:?}", profile.key), raw));
            continue;
        };
        let Some(raw_ts) = non_empty(&raw, &profile.timestamp) else {
            out.rejected.push(reject(
                format!("missing required field {:?}", profile.timestamp),
                raw,
            ));
            continue;
        };
        let Some(ts) = profile.timestamp_format.parse(raw_ts) else {
            out.rejected
                .push(reject(format!("unparseable timestamp {raw_ts:?}"), raw));
            continue;
        };
        if since.high_water.is_some_and(|w| ts <= w) {
            continue;
        }
        out.records.push(SourceRecord {
            source_id: cfg.source_id.clone(),
            native_key: key,
            raw,
            source_timestamp: ts,
            line,
        });
    }
    out.records
        .sort_by(|a, b| (a.source_timestamp, a.line).cmp(&(b.source_timestamp, b.line)));
    Ok(out)
}

/// Maps one record onto a canonical event; the error is the rejection reason.
pub fn normalize(rec: &SourceRecord, profile: &MappingProfile) -> Result<Normalized, String> {
    let raw = &rec.raw;
    for field in &profile.required {
        if non_empty(raw, field).is_none() {
            return Err(format!("missing required field {field:?}"));
        }
    }
    let patient_id = non_empty(raw, &profile.patient)
        .ok_or_else(|| format!("missing required field {:?}", profile.patient))?;
    let raw_type = non_empty(raw, &profile.type_field)
        .ok_or_else(|| format!("missing required field {:?}", profile.type_field))?;
    let event_type = *profile
        .type_map
        .get(raw_type)
        .ok_or_else(|| format!("unknown {} value {raw_type:?}", profile.type_field))?;
    let amount = if event_type.is_financial() {
        let field = profile
            .amount
            .as_deref()
            .ok_or_else(|| "profile maps no amount column for a financial record".to_string())?;
        let text = non_empty(raw, field).ok_or_else(|| format!("missing required field {field:?}"))?;
        Some(
            text.parse::<Money>()
                .map_err(|e| format!("invalid amount {text:?}: {e}"))?,
        )
    } else {
        None
    };
    let opt = |f: &Option<String>| f.as_deref().and_then(|f| non_empty(raw, f)).map(str::to_string);
    let attributes = profile
        .attributes
        .iter()
        .filter_map(|(name, col)| non_empty(raw, col).map(|v| (name.clone(), AttrValue::from(v))))
        .collect();
    let patient = match opt(&profile.birth_date) {
        Some(text) => Some(Patient {
            patient_id: patient_id.to_string(),
            birth_date: profile
                .parse_birth_date(&text)
                .ok_or_else(|| format!("unparseable birth date {text:?}"))?,
            gender: opt(&profile.gender)
                .map_or(crate::model::Gender::U, |g| profile.map_gender(&g)),
        }),
        None => None,
    };
    let event = Event {
        event_id: make_event_id(&rec.source_id, &rec.native_key).map_err(|e| e.to_string())?,
        patient_id: patient_id.to_string(),
        encounter_id: opt(&profile.encounter),
        event_type,
        timestamp: rec.source_timestamp,
        department: opt(&profile.department),
        attributes,
        amount,
        source_id: rec.source_id.clone(),
        source_native_key: rec.native_key.clone(),
    };
    event.validate().map_err(|e| e.to_string())?;
    Ok(Normalized { event, patient })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source_id: String,
    pub read: usize,
    pub normalized: usize,
    pub rejected: usize,
    pub upserted: usize,
    pub watermark: Watermark,
    pub rejections: Vec<Rejection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub sources: Vec<SourceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build: Option<BuildReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub build_error: Option<String>,
}

impl IngestReport {
    pub fn ok(&self) -> bool {
        self.build_error.is_none() && self.sources.iter().all(|s| s.error.is_none())
    }

    pub fn upserted(&self) -> usize {
        self.sources.iter().map(|s| s.upserted).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Read past the watermarks and relink the dirty patients.
    Increment,
    /// Clear the watermarks, reload everything and relink every patient.
    Rebuild,
}

struct Prepared {
    report: SourceReport,
    events: Vec<Event>,
    patients: Vec<Patient>,
    max_good: Option<DateTime<Utc>>,
}

fn prepare(repo: &Repository, cfg: &SourceConfig, profile: &MappingProfile) -> Prepared {
    let since = repo.watermark_get(&cfg.source_id);
    let mut report = SourceReport {
        source_id: cfg.source_id.clone(),
        read: 0,
        normalized: 0,
        rejected: 0,
        upserted: 0,
        watermark: since,
        rejections: Vec::new(),
        error: None,
    };
    let mut prepared = Prepared {
        report: report.clone(),
        events: Vec::new(),
        patients: Vec::new(),
        max_good: None,
    };
    let read = match read_source(cfg, profile, since) {
        Ok(r) => r,
        Err(e) => {
            report.error = Some(e.to_string());
            prepared.report = report;
            return prepared;
        }
    };
    report.rejections = read.rejected;
    let mut patients: BTreeMap<String, Patient> = BTreeMap::new();
    for rec in &read.records {
        match normalize(rec, profile) {
            Ok(n) => {
                prepared.max_good = prepared.max_good.max(Some(n.event.timestamp));
                if let Some(p) = n.patient {
                    patients.insert(p.patient_id.clone(), p);
                }
                prepared.events.push(n.event);
            }
            Err(reason) => report.rejections.push(Rejection {
                source_id: cfg.source_id.clone(),
                line: rec.line,
                native_key: Some(rec.native_key.clone()),
                reason,
                raw: rec.raw.clone(),
            }),
        }
    }
    report.rejections.sort_by_key(|r| r.line);
    report.normalized = prepared.events.len();
    report.rejected = report.rejections.len();
    report.read = report.normalized + report.rejected;
    prepared.patients = patients.into_values().collect();
    prepared.report = report;
    prepared
}

pub fn quarantine_path(root: &Path, source_id: &str) -> PathBuf {
    root.join(format!("rejects-{source_id}.jsonl"))
}

/// Appends rejections not already present in the quarantine file.
fn quarantine(root: &Path, source_id: &str, rejections: &[Rejection]) -> io::Result<()> {
    if rejections.is_empty() {
        return Ok(());
    }
    let path = quarantine_path(root, source_id);
    let existing: HashSet<String> = match fs::read_to_string(&path) {
        Ok(text) => text.lines().map(str::to_string).collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => HashSet::new(),
        Err(e) => return Err(e),
    };
    let mut out = String::new();
    for r in rejections {
        let line = to_canonical_string(r);
        if !existing.contains(&line) {
            out.push_str(&line);
            out.push('\n');
        }
    }
    if !out.is_empty() {
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        f.write_all(out.as_bytes())?;
        f.sync_data()?;
    }
    Ok(())
}

/// Loads every source into the repository and relinks affected patients.
///
/// Sources are read and normalized in parallel; each source's events are
/// then stored as one atomic batch. Watermarks advance only for sources
/// whose batch was stored and only after linkage succeeded.
pub fn load(
    repo: &Repository,
    sources: &[(SourceConfig, MappingProfile)],
    policy: &LinkagePolicy,
    mode: LoadMode,
) -> IngestReport {
    if mode == LoadMode::Rebuild {
        if let Err(e) = repo.reset_watermarks() {
            return IngestReport {
                sources: Vec::new(),
                build: None,
                build_error: Some(e.to_string()),
            };
        }
    }
    let prepared: Vec<Prepared> = std::thread::scope(|s| {
        let handles: Vec<_> = sources
            .iter()
            .map(|(cfg, profile)| s.spawn(move || prepare(repo, cfg, profile)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("source worker panicked"))
            .collect()
    });

    let mut reports = Vec::new();
    let mut advance = Vec::new();
    for p in prepared {
        let mut report = p.report;
        if report.error.is_none() {
            if let Err(e) = quarantine(repo.root(), &report.source_id, &report.rejections) {
                warn!(source = %report.source_id, error = %e, "could not write quarantine file");
            }
            match repo.upsert(&p.events, &p.patients) {
                Ok(outcome) => {
                    report.upserted = outcome.new_events + outcome.changed_events;
                    if let Some(t) = p.max_good {
                        advance.push((report.source_id.clone(), report.watermark.max(Watermark::at(t))));
                    }
                }
                Err(e) => report.error = Some(format!("repository write failed: {e}")),
            }
        }
        reports.push(report);
    }

    let build = match mode {
        LoadMode::Increment => apply_increment(repo, policy),
        LoadMode::Rebuild => rebuild_all(repo, policy),
    };
    let mut out = IngestReport {
        sources: reports,
        build: None,
        build_error: None,
    };
    match build {
        Ok(b) => out.build = Some(b),
        Err(e) => {
            out.build_error = Some(e.to_string());
            return out;
        }
    }
    for (source_id, w) in advance {
        match repo.watermark_set(&source_id, w) {
            Ok(()) => {
                if let Some(r) = out.sources.iter_mut().find(|r| r.source_id == source_id) {
                    r.watermark = w;
                }
            }
            Err(e) => {
                if let Some(r) = out.sources.iter_mut().find(|r| r.source_id == source_id) {
                    r.error = Some(format!("watermark update failed: {e}"));
                }
            }
        }
    }
    info!(
        upserted = out.upserted(),
        written = out.build.map_or(0, |b| b.episodes_written),
        "ingest finished"
    );
    out
}

pub fn load_increment(
    repo: &Repository,
    sources: &[(SourceConfig, MappingProfile)],
    policy: &LinkagePolicy,
) -> IngestReport {
    load(repo, sources, policy, LoadMode::Increment)
}
