//! Canonical event and episode-of-care document model.
//!
//! Every other module speaks in terms of [`Event`], [`Patient`] and
//! [`EpisodeOfCare`]. Episodes persist as a single JSON document whose keys are
//! written in lexicographic order, so two equal episodes always serialize to
//! the same bytes.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invariant violated: {0}")]
    Invariant(&'static str),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Fixed-point currency amount with two fractional digits, stored in cents.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_cents(cents: i64) -> Self {
        Money(cents)
    }

    pub fn cents(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Money {
    type Err = ModelError;

    /// Accepts `123`, `123.4`, `123.45` with an optional leading `-`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Validation(format!("invalid currency amount {s:?}"));
        let t = s.trim();
        let (neg, digits) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (whole, frac) = match digits.split_once('.') {
            Some((w, f)) => (w, f),
            None => (digits, ""),
        };
        if whole.is_empty()
            || !whole.bytes().all(|b| b.is_ascii_digit())
            || frac.len() > 2
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let frac_cents: i64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<i64>().map_err(|_| bad())? * 10,
            _ => frac.parse().map_err(|_| bad())?,
        };
        let cents = whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(frac_cents))
            .ok_or_else(bad)?;
        Ok(Money(if neg { -cents } else { cents }))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventType {
    Admission,
    Discharge,
    Transfer,
    Procedure,
    Diagnosis,
    LabResult,
    MedicationAdmin,
    SepsisFlag,
    Death,
    BillingCharge,
    CostEntry,
    Appointment,
}

impl EventType {
    pub const ALL: [EventType; 12] = [
        EventType::Admission,
        EventType::Discharge,
        EventType::Transfer,
        EventType::Procedure,
        EventType::Diagnosis,
        EventType::LabResult,
        EventType::MedicationAdmin,
        EventType::SepsisFlag,
        EventType::Death,
        EventType::BillingCharge,
        EventType::CostEntry,
        EventType::Appointment,
    ];

    pub fn is_financial(self) -> bool {
        matches!(self, EventType::BillingCharge | EventType::CostEntry)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Admission => "ADMISSION",
            EventType::Discharge => "DISCHARGE",
            EventType::Transfer => "TRANSFER",
            EventType::Procedure => "PROCEDURE",
            EventType::Diagnosis => "DIAGNOSIS",
            EventType::LabResult => "LAB_RESULT",
            EventType::MedicationAdmin => "MEDICATION_ADMIN",
            EventType::SepsisFlag => "SEPSIS_FLAG",
            EventType::Death => "DEATH",
            EventType::BillingCharge => "BILLING_CHARGE",
            EventType::CostEntry => "COST_ENTRY",
            EventType::Appointment => "APPOINTMENT",
        }
    }
}

impl FromStr for EventType {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EventType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ModelError::Validation(format!("unknown event type {s:?}")))
    }
}

/// Attribute value of an event: string, number or boolean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl AttrValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: String,
    pub patient_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter_id: Option<String>,
    pub event_type: EventType,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amount: Option<Money>,
    pub source_id: String,
    pub source_native_key: String,
}

impl Event {
    /// Ordering key used everywhere events are sorted.
    pub fn sort_key(&self) -> (DateTime<Utc>, &str) {
        (self.timestamp, &self.event_id)
    }

    /// Non-empty encounter id, if any.
    pub fn encounter(&self) -> Option<&str> {
        self.encounter_id.as_deref().filter(|s| !s.is_empty())
    }

    pub fn attr_str(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).and_then(AttrValue::as_str)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patient_id.is_empty() {
            return Err(ModelError::Invariant("event patient_id is non-empty"));
        }
        if self.event_type.is_financial() != self.amount.is_some() {
            return Err(ModelError::Invariant(
                "amount present exactly for financial event types",
            ));
        }
        match make_event_id(&self.source_id, &self.source_native_key) {
            Ok(id) if id == self.event_id => Ok(()),
            _ => Err(ModelError::Invariant(
                "event_id is a function of (source_id, source_native_key)",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
    U,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
            Gender::U => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub birth_date: NaiveDate,
    pub gender: Gender,
}

impl Patient {
    /// Age in completed years on the date of `at`.
    pub fn age_at(&self, at: DateTime<Utc>) -> i64 {
        let d = at.date_naive();
        let mut years = (d.year() - self.birth_date.year()) as i64;
        if (d.month(), d.day()) < (self.birth_date.month(), self.birth_date.day()) {
            years -= 1;
        }
        years
    }
}

/// Age bands used for stratification, as `(label, lower bound inclusive)`.
pub const AGE_BANDS: [(&str, i64); 5] = [
    ("0-17", 0),
    ("18-39", 18),
    ("40-59", 40),
    ("60-79", 60),
    ("80+", 80),
];

pub fn age_band(age: i64) -> &'static str {
    AGE_BANDS
        .iter()
        .rev()
        .find(|(_, lo)| age >= *lo)
        .map(|(label, _)| *label)
        .unwrap_or(AGE_BANDS[0].0)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Derived {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_of_stay_days: Option<f64>,
    pub total_charges: Money,
    pub total_costs: Money,
    pub contribution_margin: Money,
    pub died: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOfCare {
    pub episode_id: String,
    pub patient_id: String,
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission_time: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discharge_time: Option<DateTime<Utc>>,
    pub open: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_department: Option<String>,
    pub derived: Derived,
    #[serde(default)]
    pub cohort_labels: BTreeSet<String>,
}

impl EpisodeOfCare {
    /// An episode is inpatient when it contains an admission.
    pub fn is_inpatient(&self) -> bool {
        self.events
            .iter()
            .any(|e| e.event_type == EventType::Admission)
    }

    pub fn los(&self) -> Option<f64> {
        self.derived.length_of_stay_days
    }

    /// Same episode ignoring cohort labels.
    pub fn same_content(&self, other: &EpisodeOfCare) -> bool {
        self.episode_id == other.episode_id
            && self.patient_id == other.patient_id
            && self.events == other.events
            && self.admission_time == other.admission_time
            && self.discharge_time == other.discharge_time
            && self.open == other.open
            && self.primary_department == other.primary_department
            && self.derived == other.derived
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = HashSet::new();
        for e in &self.events {
            if e.patient_id != self.patient_id {
                return Err(ModelError::Invariant(
                    "all events share patient_id with the episode",
                ));
            }
            if !seen.insert(e.event_id.as_str()) {
                return Err(ModelError::Invariant("no duplicate event_id"));
            }
            e.validate()?;
        }
        if self
            .events
            .windows(2)
            .any(|w| w[0].sort_key() > w[1].sort_key())
        {
            return Err(ModelError::Invariant(
                "events sorted ascending by (timestamp, event_id)",
            ));
        }
        if self.open != self.discharge_time.is_none() {
            return Err(ModelError::Invariant("open iff discharge_time absent"));
        }
        if let (Some(a), Some(d)) = (self.admission_time, self.discharge_time) {
            if d < a {
                return Err(ModelError::Invariant("discharge_time >= admission_time"));
            }
        }
        if self.derived != compute_derived(self) {
            return Err(ModelError::Invariant(
                "derived fields match events and admission/discharge times",
            ));
        }
        Ok(())
    }
}

fn hex_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic event identifier derived from the source and its native key.
pub fn make_event_id(source_id: &str, source_native_key: &str) -> Result<String, ModelError> {
    if source_id.is_empty() || source_native_key.is_empty() {
        return Err(ModelError::Validation(
            "source_id and source_native_key must be non-empty".into(),
        ));
    }
    Ok(format!("ev_{}", hex_digest(&[source_id, source_native_key])))
}

/// Episode identifier from the patient and the first event of the episode.
pub fn make_episode_id(patient_id: &str, first_event_id: &str) -> String {
    format!("ep_{}", hex_digest(&["episode", patient_id, first_event_id]))
}

pub fn los_days(admission: DateTime<Utc>, discharge: DateTime<Utc>) -> f64 {
    (discharge - admission).num_milliseconds() as f64 / 86_400_000.0
}

fn compute_derived(e: &EpisodeOfCare) -> Derived {
    let sum_of = |t: EventType| -> Money {
        e.events
            .iter()
            .filter(|ev| ev.event_type == t)
            .filter_map(|ev| ev.amount)
            .sum()
    };
    let total_charges = sum_of(EventType::BillingCharge);
    let total_costs = sum_of(EventType::CostEntry);
    let length_of_stay_days = match (e.admission_time, e.discharge_time) {
        (Some(a), Some(d)) => Some(los_days(a, d)),
        _ => None,
    };
    Derived {
        length_of_stay_days,
        total_charges,
        total_costs,
        contribution_margin: total_charges - total_costs,
        died: e.events.iter().any(|ev| ev.event_type == EventType::Death),
    }
}

/// Recomputes the derived block from the events and stay boundaries.
pub fn derive_fields(mut e: EpisodeOfCare) -> EpisodeOfCare {
    e.derived = compute_derived(&e);
    e
}

/// Writes a JSON value with object keys in lexicographic order.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_canonical(v, &mut out);
    out
}

fn write_canonical(v: &Value, out: &mut String) {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Serializes any serde value canonically.
pub fn to_canonical_string<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("model types always serialize");
    canonical_json(&value)
}

pub fn serialize_episode(e: &EpisodeOfCare) -> Result<String, ModelError> {
    e.validate()?;
    Ok(to_canonical_string(e))
}

pub fn deserialize_episode(doc: &str) -> Result<EpisodeOfCare, ModelError> {
    let e: EpisodeOfCare = serde_json::from_str(doc).map_err(|err| ModelError::Parse {
        line: err.line(),
        column: err.column(),
        message: err.to_string(),
    })?;
    e.validate()?;
    Ok(e)
}
