//! Field-mapping profiles: how the columns of one raw source map onto the
//! canonical event model.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{EventType, Gender};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceKind {
    Adt,
    Billing,
    Clinical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub source_id: String,
    pub path: PathBuf,
    pub format: SourceFormat,
    pub mapping_profile: String,
    pub kind: SourceKind,
}

/// How a raw timestamp string is read. Naive patterns are taken as UTC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFormat {
    EpochSeconds,
    Rfc3339,
    Pattern(String),
}

impl TimeFormat {
    pub fn parse(&self, raw: &str) -> Option<DateTime<Utc>> {
        let raw = raw.trim();
        match self {
            TimeFormat::EpochSeconds => raw
                .parse::<i64>()
                .ok()
                .and_then(|s| Utc.timestamp_opt(s, 0).single()),
            TimeFormat::Rfc3339 => DateTime::parse_from_rfc3339(raw)
                .ok()
                .map(|t| t.with_timezone(&Utc)),
            TimeFormat::Pattern(p) => NaiveDateTime::parse_from_str(raw, p)
                .ok()
                .map(|t| t.and_utc()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingProfile {
    /// Column holding the record's native key.
    pub key: String,
    pub timestamp: String,
    pub timestamp_format: TimeFormat,
    pub patient: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
    /// Column whose value selects the event type through `type_map`.
    pub type_field: String,
    pub type_map: BTreeMap<String, EventType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<String>,
    /// Canonical attribute name to raw column.
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birth_date: Option<String>,
    #[serde(default = "default_birth_date_format")]
    pub birth_date_format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<String>,
    /// Raw gender value to canonical gender; unmapped values become U.
    #[serde(default)]
    pub gender_map: BTreeMap<String, Gender>,
    /// Columns that must be present and non-empty.
    #[serde(default)]
    pub required: Vec<String>,
}

fn default_birth_date_format() -> String {
    "%Y-%m-%d".into()
}

impl MappingProfile {
    pub fn parse_birth_date(&self, raw: &str) -> Option<NaiveDate> {
        NaiveDate::parse_from_str(raw.trim(), &self.birth_date_format).ok()
    }

    pub fn map_gender(&self, raw: &str) -> Gender {
        self.gender_map.get(raw.trim()).copied().unwrap_or(Gender::U)
    }
}

fn map<V: Copy>(pairs: &[(&str, V)]) -> BTreeMap<String, V> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn strings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn gender_map() -> BTreeMap<String, Gender> {
    map(&[("F", Gender::F), ("M", Gender::M)])
}

/// Hospital ADT export: Portuguese headers, `DD/MM/YYYY HH:MM` times.
pub fn tasy_adt() -> MappingProfile {
    MappingProfile {
        key: "id_registro".into(),
        timestamp: "data".into(),
        timestamp_format: TimeFormat::Pattern("%d/%m/%Y %H:%M".into()),
        patient: "paciente".into(),
        encounter: Some("atendimento".into()),
        department: Some("setor".into()),
        type_field: "tipo".into(),
        type_map: map(&[
            ("ADMISSAO", EventType::Admission),
            ("ALTA", EventType::Discharge),
            ("TRANSFERENCIA", EventType::Transfer),
            ("OBITO", EventType::Death),
        ]),
        amount: None,
        attributes: BTreeMap::new(),
        birth_date: Some("nascimento".into()),
        birth_date_format: "%d/%m/%Y".into(),
        gender: Some("sexo".into()),
        gender_map: gender_map(),
        required: vec!["tipo".into(), "paciente".into()],
    }
}

/// Billing ledger export: epoch-second posting times.
pub fn billing_v1() -> MappingProfile {
    MappingProfile {
        key: "txn_id".into(),
        timestamp: "posted_at".into(),
        timestamp_format: TimeFormat::EpochSeconds,
        patient: "patient_ref".into(),
        encounter: Some("account_no".into()),
        department: Some("cost_center".into()),
        type_field: "entry_type".into(),
        type_map: map(&[
            ("charge", EventType::BillingCharge),
            ("cost", EventType::CostEntry),
        ]),
        amount: Some("valor".into()),
        attributes: strings(&[("item", "item")]),
        birth_date: None,
        birth_date_format: default_birth_date_format(),
        gender: None,
        gender_map: BTreeMap::new(),
        required: vec!["entry_type".into(), "patient_ref".into(), "valor".into()],
    }
}

/// Clinical observations: RFC-3339 times, possibly with a local offset.
pub fn clinical_v1() -> MappingProfile {
    MappingProfile {
        key: "obs_id".into(),
        timestamp: "recorded".into(),
        timestamp_format: TimeFormat::Rfc3339,
        patient: "subject".into(),
        encounter: Some("visit".into()),
        department: Some("unit".into()),
        type_field: "category".into(),
        type_map: map(&[
            ("procedure", EventType::Procedure),
            ("diagnosis", EventType::Diagnosis),
            ("lab", EventType::LabResult),
            ("medication", EventType::MedicationAdmin),
            ("sepsis_flag", EventType::SepsisFlag),
            ("appointment", EventType::Appointment),
        ]),
        amount: None,
        attributes: strings(&[
            ("class", "class"),
            ("code", "code"),
            ("name", "name"),
            ("value", "value"),
        ]),
        birth_date: None,
        birth_date_format: default_birth_date_format(),
        gender: None,
        gender_map: BTreeMap::new(),
        required: vec!["category".into(), "subject".into()],
    }
}

/// Profiles available without any configuration.
pub fn builtin_profiles() -> BTreeMap<String, MappingProfile> {
    BTreeMap::from([
        ("tasy_adt".to_string(), tasy_adt()),
        ("billing_v1".to_string(), billing_v1()),
        ("clinical_v1".to_string(), clinical_v1()),
    ])
}
