use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CorruptKind {
    /// Replaces an ADT timestamp with an impossible date.
    BadDate,
    /// Drops the patient reference from a clinical row.
    MissingField,
    /// Appends verbatim copies of billing rows.
    DupKey,
}

impl FromStr for CorruptKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "BAD_DATE" => Ok(CorruptKind::BadDate),
            "MISSING_FIELD" => Ok(CorruptKind::MissingField),
            "DUP_KEY" => Ok(CorruptKind::DupKey),
            _ => Err(format!("unknown corruption kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Defect {
    pub file: PathBuf,
    /// 1-based line number in the file after corruption.
    pub line: u64,
    pub kind: CorruptKind,
}

fn data_lines(lines: &[String], skip_header: bool) -> Vec<usize> {
    (usize::from(skip_header)..lines.len())
        .filter(|&i| !lines[i].trim().is_empty())
        .collect()
}

/// Injects `count` defects of one kind into a generated dataset, spreading
/// them evenly over the file. Returns where they landed.
pub fn corrupt(dir: &Path, kind: CorruptKind, count: usize) -> io::Result<Vec<Defect>> {
    let file = dir.join(match kind {
        CorruptKind::BadDate => "adt.csv",
        CorruptKind::MissingField => "clinical.jsonl",
        CorruptKind::DupKey => "billing.jsonl",
    });
    let mut lines: Vec<String> = fs::read_to_string(&file)?.lines().map(String::from).collect();
    let candidates = data_lines(&lines, kind == CorruptKind::BadDate);
    let count = count.min(candidates.len());
    let picks: Vec<usize> = (0..count)
        .map(|i| candidates[i * candidates.len() / count.max(1)])
        .collect();
    let mut defects = Vec::new();
    for &i in &picks {
        match kind {
            CorruptKind::BadDate => {
                let mut cols: Vec<&str> = lines[i].split(',').collect();
                cols[2] = "99/99/2015 08:00";
                lines[i] = cols.join(",");
                defects.push(i as u64 + 1);
            }
            CorruptKind::MissingField => {
                let mut v: Value = serde_json::from_str(&lines[i]).map_err(io::Error::other)?;
                v.as_object_mut().map(|o| o.remove("subject"));
                lines[i] = crate::model::canonical_json(&v);
                defects.push(i as u64 + 1);
            }
            CorruptKind::DupKey => {
                lines.push(lines[i].clone());
                defects.push(lines.len() as u64);
            }
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(&file, text)?;
    Ok(defects
        .into_iter()
        .map(|line| Defect {
            file: file.clone(),
            line,
            kind,
        })
        .collect())
}
