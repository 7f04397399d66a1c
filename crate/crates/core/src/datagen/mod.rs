//! Deterministic synthetic hospital.
//!
//! Produces the three heterogeneous source files the extractor ingests plus
//! `ground_truth.json`, holding the planned episode partition and every KPI
//! series computed directly from the plan, without going through extraction
//! or linkage.

mod corrupt;
mod truth;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{make_event_id, EventType, Gender, Money};

pub use corrupt::{corrupt, CorruptKind, Defect};
pub use truth::{GroundTruth, TruthEpisode, TruthSeries};

pub const ADT_SOURCE: &str = "adt";
pub const BILLING_SOURCE: &str = "billing";
pub const CLINICAL_SOURCE: &str = "clinical";
pub const ADT_HEADER: &str = "id_registro,tipo,data,paciente,atendimento,setor,nascimento,sexo";

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub seed: u64,
    pub n_patients: u32,
    pub days: u32,
    pub start_date: NaiveDate,
    pub departments: Vec<String>,
    pub sepsis_rate: f64,
    pub mortality_rate: f64,
    pub readmission_rate: f64,
    /// Probability that a patient's next contact is an outpatient visit.
    pub outpatient_rate: f64,
    pub bed_capacity: u32,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 42,
            n_patients: 200,
            days: 90,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap(),
            departments: ["cardiology", "oncology", "orthopedics", "neurology", "general_surgery"]
                .map(String::from)
                .to_vec(),
            sepsis_rate: 0.12,
            mortality_rate: 0.05,
            readmission_rate: 0.2,
            outpatient_rate: 0.35,
            bed_capacity: 40,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), GenError> {
        for (name, p) in [
            ("sepsis_rate", self.sepsis_rate),
            ("mortality_rate", self.mortality_rate),
            ("readmission_rate", self.readmission_rate),
            ("outpatient_rate", self.outpatient_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GenError::Invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if self.n_patients < 1 || self.days < 1 {
            return Err(GenError::Invalid("n_patients and days must be at least 1".into()));
        }
        if self.departments.is_empty() {
            return Err(GenError::Invalid("at least one department is needed".into()));
        }
        if self.bed_capacity < 1 {
            return Err(GenError::Invalid("bed_capacity must be at least 1".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        let start = Utc.from_utc_datetime(&self.start_date.and_hms_opt(0, 0, 0).unwrap());
        (start, start + Duration::days(self.days as i64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Src {
    Adt,
    Billing,
    Clinical,
}

impl Src {
    fn id(self) -> &'static str {
        match self {
            Src::Adt => ADT_SOURCE,
            Src::Billing => BILLING_SOURCE,
            Src::Clinical => CLINICAL_SOURCE,
        }
    }
}

/// One planned source row.
#[derive(Debug, Clone)]
struct Planned {
    src: Src,
    key: String,
    event_type: EventType,
    ts: DateTime<Utc>,
    encounter: Option<String>,
    department: String,
    attrs: BTreeMap<&'static str, String>,
    amount: Option<Money>,
}

#[derive(Debug, Clone)]
pub(crate) struct PlannedPatient {
    pub id: String,
    pub birth: NaiveDate,
    pub gender: Gender,
    raw_gender: &'static str,
}

/// An episode as the generator intends it.
#[derive(Debug, Clone)]
pub(crate) struct PlannedEpisode {
    pub patient: usize,
    pub inpatient: bool,
    pub admission: DateTime<Utc>,
    pub discharge: Option<DateTime<Utc>>,
    pub department: String,
    rows: Vec<Planned>,
}

impl PlannedEpisode {
    pub fn event_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .rows
            .iter()
            .map(|r| make_event_id(r.src.id(), &r.key).unwrap())
            .collect();
        ids.sort();
        ids
    }

    pub fn died(&self) -> bool {
        self.rows.iter().any(|r| r.event_type == EventType::Death)
    }

    pub fn sum_cents(&self, t: EventType) -> i64 {
        self.rows
            .iter()
            .filter(|r| r.event_type == t)
            .map(|r| r.amount.unwrap().cents())
            .sum()
    }

    /// `(timestamp, amount in cents)` of each row of type `t`.
    pub fn rows_of(&self, t: EventType) -> Vec<(DateTime<Utc>, i64)> {
        self.rows
            .iter()
            .filter(|r| r.event_type == t)
            .map(|r| (r.ts, r.amount.map_or(0, Money::cents)))
            .collect()
    }

    /// Sepsis flag time and minutes to the first antibiotic after it.
    pub fn sepsis(&self, classes: &[String]) -> Option<(DateTime<Utc>, f64)> {
        let mut rows: Vec<&Planned> = self.rows.iter().collect();
        rows.sort_by_key(|r| r.ts);
        let flag = rows.iter().find(|r| r.event_type == EventType::SepsisFlag)?.ts;
        let ab = rows
            .iter()
            .find(|r| {
                r.event_type == EventType::MedicationAdmin
                    && r.ts >= flag
                    && r.attrs.get("class").is_some_and(|c| classes.contains(c))
            })?
            .ts;
        Some((flag, (ab - flag).num_minutes() as f64))
    }
}

pub(crate) struct Plan {
    pub spec: GenSpec,
    pub patients: Vec<PlannedPatient>,
    pub episodes: Vec<PlannedEpisode>,
    /// Which patients have ADT rows and therefore known demographics.
    pub has_demographics: Vec<bool>,
}

struct Keys {
    adt: u32,
    billing: u32,
    clinical: u32,
    encounter: u32,
}

impl Keys {
    fn next(&mut self, src: Src) -> String {
        let (prefix, n) = match src {
            Src::Adt => ("R", &mut self.adt),
            Src::Billing => ("T", &mut self.billing),
            Src::Clinical => ("O", &mut self.clinical),
        };
        *n += 1;
        format!("{prefix}{:07}", *n)
    }
}

fn minutes(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Duration {
    Duration::minutes(rng.random_range(lo..=hi))
}

fn money(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Money {
    Money::from_cents(rng.random_range(lo * 100..=hi * 100))
}

fn procedure_for(dept: &str, rng: &mut ChaCha8Rng) -> (&'static str, &'static str) {
    match dept {
        "cardiology" if rng.random_bool(0.7) => ("stent", "coronary stent"),
        "cardiology" => ("angio", "coronary angiography"),
        "oncology" => ("chemo", "chemotherapy cycle"),
        "orthopedics" => ("hip", "hip replacement"),
        "neurology" => ("eeg", "electroencephalogram"),
        _ => ("appendectomy", "appendectomy"),
    }
}

fn diagnosis_for(dept: &str) -> &'static str {
    match dept {
        "cardiology" => "I21",
        "oncology" => "C50",
        "orthopedics" => "S72",
        "neurology" => "I63",
        _ => "K35",
    }
}

struct Ctx<'a> {
    rng: ChaCha8Rng,
    keys: Keys,
    spec: &'a GenSpec,
    end: DateTime<Utc>,
}

impl Ctx<'_> {
    fn row(
        &mut self,
        src: Src,
        event_type: EventType,
        ts: DateTime<Utc>,
        encounter: Option<&str>,
        department: &str,
    ) -> Planned {
        Planned {
            src,
            key: self.keys.next(src),
            event_type,
            ts,
            encounter: encounter.map(str::to_string),
            department: department.to_string(),
            attrs: BTreeMap::new(),
            amount: None,
        }
    }

    fn dept(&mut self) -> String {
        let d = &self.spec.departments;
        d[self.rng.random_range(0..d.len())].clone()
    }

    fn inpatient(
        &mut self,
        patient: usize,
        adm: DateTime<Utc>,
        cap_to_window: bool,
    ) -> (PlannedEpisode, bool) {
        let dept = self.dept();
        self.keys.encounter += 1;
        let enc = format!("E{:06}", self.keys.encounter);
        let enc = Some(enc.as_str());
        let mut los = if self.rng.random_bool(0.6) {
            minutes(&mut self.rng, 6 * 60, 3 * 1440)
        } else {
            minutes(&mut self.rng, 5 * 1440, 14 * 1440)
        };
        if cap_to_window && adm + los >= self.end {
            los = Duration::minutes((self.end - adm).num_minutes() * 9 / 10);
        }
        let dis = adm + los;
        let half = (los.num_minutes() / 2).max(2);
        let mut rows = vec![self.row(Src::Adt, EventType::Admission, adm, enc, &dept)];

        let mut dx = self.row(Src::Clinical, EventType::Diagnosis, adm + Duration::minutes(1), enc, &dept);
        dx.attrs.insert("code", diagnosis_for(&dept).into());
        rows.push(dx);
        if self.rng.random_bool(0.6) {
            let at = adm + minutes(&mut self.rng, 1, half);
            let (code, name) = procedure_for(&dept, &mut self.rng);
            let mut p = self.row(Src::Clinical, EventType::Procedure, at, enc, &dept);
            p.attrs.insert("code", code.into());
            p.attrs.insert("name", name.into());
            rows.push(p);
        }
        for _ in 0..self.rng.random_range(1..=3) {
            let at = adm + minutes(&mut self.rng, 1, los.num_minutes().max(1));
            let mut lab = self.row(Src::Clinical, EventType::LabResult, at, enc, &dept);
            lab.attrs.insert("code", "cbc".into());
            lab.attrs.insert("value", format!("{}", self.rng.random_range(3..15)));
            rows.push(lab);
        }
        if self.rng.random_bool(0.15) {
            let other = self.dept();
            let at = adm + minutes(&mut self.rng, 1, half);
            rows.push(self.row(Src::Adt, EventType::Transfer, at, enc, &other));
        }
        if los >= Duration::days(1) && self.rng.random_bool(self.spec.sepsis_rate) {
            let flag = adm + minutes(&mut self.rng, 60, half);
            rows.push(self.row(Src::Clinical, EventType::SepsisFlag, flag, enc, &dept));
            if self.rng.random_bool(0.5) {
                let mut med = self.row(
                    Src::Clinical,
                    EventType::MedicationAdmin,
                    flag + Duration::minutes(5),
                    enc,
                    &dept,
                );
                med.attrs.insert("class", "analgesic".into());
                med.attrs.insert("name", "dipyrone".into());
                rows.push(med);
            }
            let at = flag + minutes(&mut self.rng, 15, 240);
            let mut ab = self.row(Src::Clinical, EventType::MedicationAdmin, at, enc, &dept);
            ab.attrs.insert("class", "antibiotic".into());
            ab.attrs.insert("name", "ceftriaxone".into());
            rows.push(ab);
        }
        for (t, n, lo, hi) in [
            (EventType::BillingCharge, self.rng.random_range(1..=3), 100, 20_000),
            (EventType::CostEntry, self.rng.random_range(1..=2), 50, 15_000),
        ] {
            for _ in 0..n {
                let at = adm + minutes(&mut self.rng, 0, los.num_minutes() + 48 * 60);
                let mut r = self.row(Src::Billing, t, at, enc, &dept);
                r.amount = Some(money(&mut self.rng, lo, hi));
                r.attrs.insert("item", if t == EventType::BillingCharge { "service" } else { "supply" }.into());
                rows.push(r);
            }
        }
        let died = self.rng.random_bool(self.spec.mortality_rate);
        if died {
            rows.push(self.row(Src::Adt, EventType::Death, dis, enc, &dept));
        }
        rows.push(self.row(Src::Adt, EventType::Discharge, dis, enc, &dept));

        let open = dis >= self.end;
        let end = self.end;
        rows.retain(|r| r.ts < end);
        let ep = PlannedEpisode {
            patient,
            inpatient: true,
            admission: adm,
            discharge: (!open).then_some(dis),
            department: dept,
            rows,
        };
        (ep, died)
    }

    fn outpatient(&mut self, patient: usize, at: DateTime<Utc>) -> Option<PlannedEpisode> {
        let dept = self.dept();
        let mut rows = vec![self.row(Src::Clinical, EventType::Appointment, at, None, &dept)];
        let lab_at = at + minutes(&mut self.rng, 30, 120);
        let mut lab = self.row(Src::Clinical, EventType::LabResult, lab_at, None, &dept);
        lab.attrs.insert("code", "glucose".into());
        lab.attrs.insert("value", format!("{}", self.rng.random_range(70..200)));
        rows.push(lab);
        if self.rng.random_bool(0.6) {
            let c_at = at + minutes(&mut self.rng, 60, 180);
            let mut c = self.row(Src::Billing, EventType::BillingCharge, c_at, None, &dept);
            c.amount = Some(money(&mut self.rng, 50, 800));
            c.attrs.insert("item", "consultation".into());
            rows.push(c);
        }
        let end = self.end;
        rows.retain(|r| r.ts < end);
        if rows.is_empty() {
            return None;
        }
        let first = rows.iter().map(|r| r.ts).min().unwrap();
        let last = rows.iter().map(|r| r.ts).max().unwrap();
        Some(PlannedEpisode {
            patient,
            inpatient: false,
            admission: first,
            discharge: Some(last),
            department: dept,
            rows,
        })
    }
}

pub(crate) fn plan(spec: &GenSpec) -> Result<Plan, GenError> {
    spec.validate()?;
    let (start, end) = spec.window();
    let window_min = spec.days as i64 * 1440;
    let mut cx = Ctx {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        keys: Keys {
            adt: 0,
            billing: 0,
            clinical: 0,
            encounter: 0,
        },
        spec,
        end,
    };
    let mut patients = Vec::new();
    let mut episodes = Vec::new();
    let mut has_demographics = Vec::new();
    for p in 0..spec.n_patients as usize {
        let birth = NaiveDate::from_ymd_opt(1925, 1, 1).unwrap()
            + Duration::days(cx.rng.random_range(0..32_000));
        let (gender, raw_gender) = match cx.rng.random_range(0..100) {
            0..48 => (Gender::F, "F"),
            48..96 => (Gender::M, "M"),
            _ => (Gender::U, "I"),
        };
        patients.push(PlannedPatient {
            id: format!("P{:05}", p + 1),
            birth,
            gender,
            raw_gender,
        });
        let mut inpatient_seen = false;
        let mut t = start + minutes(&mut cx.rng, 0, window_min * 6 / 10);
        let mut first = true;
        let mut force_inpatient = false;
        while t < end {
            if !force_inpatient && cx.rng.random_bool(spec.outpatient_rate) {
                let Some(ep) = cx.outpatient(p, t) else { break };
                t = ep.discharge.unwrap() + minutes(&mut cx.rng, 2 * 1440, 40 * 1440);
                episodes.push(ep);
                continue;
            }
            let (ep, died) = cx.inpatient(p, t, first);
            first = false;
            inpatient_seen = true;
            let Some(dis) = ep.discharge else {
                episodes.push(ep);
                break;
            };
            episodes.push(ep);
            if died {
                break;
            }
            force_inpatient = cx.rng.random_bool(spec.readmission_rate);
            t = if force_inpatient {
                dis + minutes(&mut cx.rng, 4 * 1440, 29 * 1440)
            } else {
                dis + minutes(&mut cx.rng, 35 * 1440, 100 * 1440)
            };
        }
        has_demographics.push(inpatient_seen);
    }
    Ok(Plan {
        spec: spec.clone(),
        patients,
        episodes,
        has_demographics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub files: BTreeMap<String, PathBuf>,
    pub counts: BTreeMap<String, usize>,
    pub ground_truth_path: PathBuf,
    pub config_path: PathBuf,
}

fn rfc3339(ts: DateTime<Utc>, local: bool) -> String {
    if local {
        let offset = chrono::FixedOffset::west_opt(3 * 3600).unwrap();
        ts.with_timezone(&offset).format("%Y-%m-%dT%H:%M:%S%:z").to_string()
    } else {
        ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }
}

fn render(plan: &Plan) -> (String, String, String) {
    let mut rows: Vec<(&Planned, usize)> = plan
        .episodes
        .iter()
        .flat_map(|e| e.rows.iter().map(move |r| (r, e.patient)))
        .collect();
    rows.sort_by(|a, b| (a.0.ts, a.0.src, &a.0.key).cmp(&(b.0.ts, b.0.src, &b.0.key)));
    let mut adt = format!("{ADT_HEADER}\n");
    let mut billing = String::new();
    let mut clinical = String::new();
    for (r, p) in rows {
        let patient = &plan.patients[p];
        let enc = r.encounter.clone().unwrap_or_default();
        match r.src {
            Src::Adt => {
                let tipo = match r.event_type {
                    EventType::Admission => "ADMISSAO",
                    EventType::Discharge => "ALTA",
                    EventType::Transfer => "TRANSFERENCIA",
                    _ => "OBITO",
                };
                adt.push_str(&format!(
                    "{},{tipo},{},{},{enc},{},{},{}\n",
                    r.key,
                    r.ts.format("%d/%m/%Y %H:%M"),
                    patient.id,
                    r.department,
                    patient.birth.format("%d/%m/%Y"),
                    patient.raw_gender
                ));
            }
            Src::Billing => {
                let mut obj = json!({
                    "txn_id": r.key,
                    "entry_type": if r.event_type == EventType::BillingCharge { "charge" } else { "cost" },
                    "posted_at": r.ts.timestamp(),
                    "patient_ref": patient.id,
                    "valor": r.amount.unwrap().to_string(),
                    "cost_center": r.department,
                    "item": r.attrs.get("item"),
                });
                if let Some(e) = &r.encounter {
                    obj["account_no"] = Value::String(e.clone());
                }
                billing.push_str(&crate::model::canonical_json(&obj));
                billing.push('\n');
            }
            Src::Clinical => {
                let category = match r.event_type {
                    EventType::Procedure => "procedure",
                    EventType::Diagnosis => "diagnosis",
                    EventType::LabResult => "lab",
                    EventType::MedicationAdmin => "medication",
                    EventType::SepsisFlag => "sepsis_flag",
                    _ => "appointment",
                };
                let local = r.key.ends_with(['1', '3', '5', '7', '9']);
                let mut obj = json!({
                    "obs_id": r.key,
                    "category": category,
                    "recorded": rfc3339(r.ts, local),
                    "subject": patient.id,
                    "unit": r.department,
                });
                if let Some(e) = &r.encounter {
                    obj["visit"] = Value::String(e.clone());
                }
                for (k, v) in &r.attrs {
                    obj[*k] = Value::String(v.clone());
                }
                clinical.push_str(&crate::model::canonical_json(&obj));
                clinical.push('\n');
            }
        }
    }
    (adt, billing, clinical)
}

/// Writes `adt.csv`, `billing.jsonl`, `clinical.jsonl`, `ground_truth.json`,
/// `eoc.toml` and `manifest.json` into `out_dir`.
pub fn generate(spec: &GenSpec, out_dir: &Path) -> Result<Manifest, GenError> {
    let plan = plan(spec)?;
    fs::create_dir_all(out_dir)?;
    let (adt, billing, clinical) = render(&plan);
    let files = BTreeMap::from([
        ("adt".to_string(), out_dir.join("adt.csv")),
        ("billing".to_string(), out_dir.join("billing.jsonl")),
        ("clinical".to_string(), out_dir.join("clinical.jsonl")),
    ]);
    fs::write(&files["adt"], &adt)?;
    fs::write(&files["billing"], &billing)?;
    fs::write(&files["clinical"], &clinical)?;
    let truth = truth::ground_truth(&plan);
    let truth_path = out_dir.join("ground_truth.json");
    fs::write(&truth_path, serde_json::to_string(&truth).expect("truth serializes"))?;
    let config_path = out_dir.join("eoc.toml");
    fs::write(&config_path, crate::fixtures::config_text(spec.bed_capacity))?;
    let counts = BTreeMap::from([
        ("adt_rows".to_string(), adt.lines().count() - 1),
        ("billing_rows".to_string(), billing.lines().count()),
        ("clinical_rows".to_string(), clinical.lines().count()),
        ("patients".to_string(), plan.patients.len()),
        ("episodes".to_string(), plan.episodes.len()),
    ]);
    let manifest = Manifest {
        seed: spec.seed,
        files,
        counts,
        ground_truth_path: truth_path,
        config_path,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(manifest)
}
