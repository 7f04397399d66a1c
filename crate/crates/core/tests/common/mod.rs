#![allow(dead_code)]

use std::path::Path;

use eoc_core::config::PlatformConfig;
use eoc_core::extract::{load, IngestReport, LoadMode};
use eoc_core::kpi::{BucketRow, Cell};
use eoc_core::store::{Mode, Repository};

pub fn open(cfg_path: &Path) -> (PlatformConfig, Repository) {
    let cfg = PlatformConfig::load(cfg_path).expect("config loads");
    let repo = Repository::open(&cfg.repository, Mode::ReadWrite).expect("repository opens");
    repo.set_sync(false);
    (cfg, repo)
}

pub fn ingest(cfg: &PlatformConfig, repo: &Repository, mode: LoadMode) -> IngestReport {
    let sources = cfg.resolved_sources().expect("sources resolve");
    let report = load(repo, &sources, &cfg.linkage, mode);
    assert!(report.ok(), "ingest failed: {report:?}");
    report
}

pub fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0),
        _ => false,
    }
}

fn cell_eq(a: &Cell, b: &Cell) -> bool {
    a.n == b.n && close(a.value, b.value)
}

/// Describes the first difference between two bucket lists, if any.
pub fn diff_rows(got: &[BucketRow], want: &[BucketRow]) -> Option<String> {
    if got.len() != want.len() {
        return Some(format!("bucket count {} vs {}", got.len(), want.len()));
    }
    for (g, w) in got.iter().zip(want) {
        if (g.bucket_start, g.bucket_end) != (w.bucket_start, w.bucket_end) {
            return Some(format!("bounds {:?} vs {:?}", g.bucket_start, w.bucket_start));
        }
        if g.n != w.n || !close(g.value, w.value) {
            return Some(format!("{}: total {:?}/{} vs {:?}/{}", g.bucket_start, g.value, g.n, w.value, w.n));
        }
        if g.strata.len() != w.strata.len()
            || g.strata.iter().zip(&w.strata).any(|((ka, a), (kb, b))| ka != kb || !cell_eq(a, b))
        {
            return Some(format!("{}: strata {:?} vs {:?}", g.bucket_start, g.strata, w.strata));
        }
    }
    None
}

use chrono::{DateTime, NaiveDateTime, Utc};

/// Source timestamp of one raw line of a generated file.
pub fn raw_ts(file: &str, line: &str) -> DateTime<Utc> {
    if file == "adt.csv" {
        let data = line.split(',').nth(2).unwrap();
        return NaiveDateTime::parse_from_str(data, "%d/%m/%Y %H:%M").unwrap().and_utc();
    }
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    match v.get("posted_at") {
        Some(secs) => DateTime::from_timestamp(secs.as_i64().unwrap(), 0).unwrap(),
        None => DateTime::parse_from_rfc3339(v["recorded"].as_str().unwrap())
            .unwrap()
            .with_timezone(&Utc),
    }
}

pub const SOURCE_FILES: [&str; 3] = ["adt.csv", "billing.jsonl", "clinical.jsonl"];

/// Rewrites the three source files in `dst` to hold only the rows of `src`
/// stamped before `cutoff`, keeping the original order.
pub fn write_prefix(src: &Path, dst: &Path, cutoff: DateTime<Utc>) {
    for f in SOURCE_FILES {
        let text = std::fs::read_to_string(src.join(f)).unwrap();
        let mut out = String::new();
        for (i, line) in text.lines().enumerate() {
            if (f == "adt.csv" && i == 0) || raw_ts(f, line) < cutoff {
                out.push_str(line);
                out.push('\n');
            }
        }
        std::fs::write(dst.join(f), out).unwrap();
    }
}

/// Contents of every file under `dir`, keyed by relative path.
pub fn dir_bytes(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "LOCK" {
                out.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    out
}
