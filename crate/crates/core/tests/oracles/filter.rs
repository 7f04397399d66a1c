//! Random filter ASTs, a pool of episodes to evaluate them on, and a direct
//! tree-walking evaluator that reads the episode without going through the
//! engine's field accessors.

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Utc};
use eoc_core::builder::{link_events, LinkagePolicy};
use eoc_core::filter::{CmpOp, Field, FieldType, FilterAst, Literal};
use eoc_core::model::{make_event_id, AttrValue, EpisodeOfCare, Event, EventType, Gender, Money, Patient};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DEPARTMENTS: [&str; 3] = ["cardiology", "oncology", "neurology"];
const CODES: [&str; 4] = ["stent", "angio", "I21", "coronary stent"];
const STRINGS: [&str; 9] = ["cardiology", "oncology", "F", "M", "U", "stent", "I21", "say \"hi\"", "back\\slash\ttab"];
const NUMBERS: [f64; 10] = [0.0, 1.0, 2.0, 7.0, 9.0, 18.0, 60.0, 100.5, -3.25, 10000.0];

pub fn episode_pool(seed: u64, patients: usize) -> Vec<(EpisodeOfCare, Option<Patient>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Utc.with_ymd_and_hms(2015, 3, 1, 0, 0, 0).unwrap();
    let mut out = Vec::new();
    for p in 0..patients {
        let pid = format!("F{p}");
        let patient = rng.random_bool(0.8).then(|| Patient {
            patient_id: pid.clone(),
            birth_date: NaiveDate::from_ymd_opt(rng.random_range(1930..2010), rng.random_range(1..13), rng.random_range(1..29)).unwrap(),
            gender: [Gender::F, Gender::M, Gender::U][rng.random_range(0..3)],
        });
        let mut events: Vec<Event> = (0..rng.random_range(1..10))
            .map(|i| {
                let t = [
                    EventType::Admission,
                    EventType::Discharge,
                    EventType::Procedure,
                    EventType::Diagnosis,
                    EventType::Death,
                    EventType::BillingCharge,
                    EventType::CostEntry,
                    EventType::LabResult,
                ][rng.random_range(0..8)];
                let native = format!("{pid}-{i}");
                let mut attributes = std::collections::BTreeMap::new();
                if matches!(t, EventType::Procedure | EventType::Diagnosis) {
                    attributes.insert("code".to_string(), AttrValue::from(CODES[rng.random_range(0..4)]));
                }
                Event {
                    event_id: make_event_id("f", &native).unwrap(),
                    patient_id: pid.clone(),
                    encounter_id: rng.random_bool(0.5).then(|| "E".to_string()),
                    event_type: t,
                    timestamp: base + Duration::hours(rng.random_range(0..400)),
                    department: rng
                        .random_bool(0.9)
                        .then(|| DEPARTMENTS[rng.random_range(0..3)].to_string()),
                    attributes,
                    amount: t
                        .is_financial()
                        .then(|| Money::from_cents(rng.random_range(0..2_000_000))),
                    source_id: "f".into(),
                    source_native_key: native,
                }
            })
            .collect();
        events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        for e in link_events(&events, &LinkagePolicy::default()).unwrap() {
            out.push((e, patient.clone()));
        }
    }
    out
}

fn literal_for(t: FieldType) -> BoxedStrategy<Literal> {
    match t {
        FieldType::Num => prop_oneof![
            3 => proptest::sample::select(NUMBERS.to_vec()).prop_map(Literal::Num),
            1 => (-1.0e6..1.0e6f64).prop_map(Literal::Num),
        ]
        .boxed(),
        FieldType::Str => prop_oneof![
            3 => proptest::sample::select(STRINGS.to_vec()).prop_map(|s| Literal::Str(s.to_string())),
            1 => "[a-zA-Z0-9 _\"\\\\é]{0,8}".prop_map(Literal::Str),
        ]
        .boxed(),
        FieldType::Bool => any::<bool>().prop_map(Literal::Bool).boxed(),
    }
}

pub fn leaf() -> impl Strategy<Value = FilterAst> {
    proptest::sample::select(Field::ALL.to_vec()).prop_flat_map(|field| {
        let ops = if field.field_type() == FieldType::Num {
            CmpOp::ALL.to_vec()
        } else {
            vec![CmpOp::Eq, CmpOp::Ne]
        };
        (proptest::sample::select(ops), literal_for(field.field_type()))
            .prop_map(move |(op, value)| FilterAst::cmp(field, op, value))
    })
}

/// Type-correct ASTs of depth at most four.
pub fn ast() -> impl Strategy<Value = FilterAst> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| FilterAst::and(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| FilterAst::or(a, b)),
            inner.prop_map(FilterAst::not),
        ]
    })
}

/// Every node wrapped in parentheses, keywords in mixed case.
pub fn fully_parenthesized(ast: &FilterAst) -> String {
    match ast {
        FilterAst::Cmp { .. } => format!("({ast})"),
        FilterAst::And(a, b) => format!("({} And {})", fully_parenthesized(a), fully_parenthesized(b)),
        FilterAst::Or(a, b) => format!("({} oR {})", fully_parenthesized(a), fully_parenthesized(b)),
        FilterAst::Not(a) => format!("(not {})", fully_parenthesized(a)),
    }
}

enum V {
    Missing,
    N(f64),
    S(Vec<String>),
    B(bool),
}

fn field_value(field: Field, e: &EpisodeOfCare, p: Option<&Patient>) -> V {
    let cents = |t: EventType| -> f64 {
        e.events
            .iter()
            .filter(|ev| ev.event_type == t)
            .filter_map(|ev| ev.amount)
            .map(|m| m.cents())
            .sum::<i64>() as f64
            / 100.0
    };
    let codes = |t: EventType| -> V {
        let mut v = Vec::new();
        for ev in e.events.iter().filter(|ev| ev.event_type == t) {
            for k in ["code", "name"] {
                if let Some(AttrValue::Str(s)) = ev.attributes.get(k) {
                    v.push(s.clone());
                }
            }
        }
        V::S(v)
    };
    match field {
        Field::Los => match (e.admission_time, e.discharge_time) {
            (Some(a), Some(d)) => V::N((d - a).num_milliseconds() as f64 / 86_400_000.0),
            _ => V::Missing,
        },
        Field::Department => e.primary_department.clone().map_or(V::Missing, |d| V::S(vec![d])),
        Field::Gender => p.map_or(V::Missing, |p| {
            V::S(vec![match p.gender {
                Gender::F => "F",
                Gender::M => "M",
                Gender::U => "U",
            }
            .into()])
        }),
        Field::Age => match (p, e.admission_time) {
            (Some(p), Some(a)) => {
                let d = a.date_naive();
                let b = p.birth_date;
                let before = d.month() < b.month() || (d.month() == b.month() && d.day() < b.day());
                V::N((d.year() - b.year() - before as i32) as f64)
            }
            _ => V::Missing,
        },
        Field::Died => V::B(e.events.iter().any(|ev| ev.event_type == EventType::Death)),
        Field::Open => V::B(e.admission_time.is_some() && e.discharge_time.is_none()),
        Field::TotalCharges => V::N(cents(EventType::BillingCharge)),
        Field::TotalCosts => V::N(cents(EventType::CostEntry)),
        Field::ContributionMargin => V::N(cents(EventType::BillingCharge) - cents(EventType::CostEntry)),
        Field::Procedure => codes(EventType::Procedure),
        Field::Diagnosis => codes(EventType::Diagnosis),
    }
}

pub fn oracle_eval(ast: &FilterAst, e: &EpisodeOfCare, p: Option<&Patient>) -> bool {
    match ast {
        FilterAst::Not(a) => !oracle_eval(a, e, p),
        FilterAst::And(a, b) => oracle_eval(a, e, p) && oracle_eval(b, e, p),
        FilterAst::Or(a, b) => oracle_eval(a, e, p) || oracle_eval(b, e, p),
        FilterAst::Cmp { field, op, value } => {
            let v = field_value(*field, e, p);
            match (v, value) {
                (V::N(x), Literal::Num(y)) => match op {
                    CmpOp::Eq => x == *y,
                    CmpOp::Ne => x != *y,
                    CmpOp::Lt => x < *y,
                    CmpOp::Le => x <= *y,
                    CmpOp::Gt => x > *y,
                    CmpOp::Ge => x >= *y,
                },
                (V::S(xs), Literal::Str(y)) => {
                    let hit = xs.contains(y);
                    if *op == CmpOp::Eq { hit } else { !hit }
                }
                (V::B(x), Literal::Bool(y)) => (x == *y) == (*op == CmpOp::Eq),
                _ => false,
            }
        }
    }
}
