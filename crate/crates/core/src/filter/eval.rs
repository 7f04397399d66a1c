use super::{CmpOp, Field, FilterAst, Literal};
use crate::model::{EpisodeOfCare, EventType, Patient};

/// Value of a filter field for one episode.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldValue<'a> {
    Absent,
    Num(f64),
    Str(&'a str),
    Bool(bool),
    /// Codes and names of matching events; compared by membership.
    Set(Vec<&'a str>),
}

impl<'a> FieldValue<'a> {
    pub fn of(field: Field, e: &'a EpisodeOfCare, p: Option<&'a Patient>) -> FieldValue<'a> {
        match field {
            Field::Los => e.los().map_or(FieldValue::Absent, FieldValue::Num),
            Field::Department => e
                .primary_department
                .as_deref()
                .map_or(FieldValue::Absent, FieldValue::Str),
            Field::Gender => p.map_or(FieldValue::Absent, |p| FieldValue::Str(p.gender.as_str())),
            Field::Age => match (p, e.admission_time) {
                (Some(p), Some(at)) => FieldValue::Num(p.age_at(at) as f64),
                _ => FieldValue::Absent,
            },
            Field::Died => FieldValue::Bool(e.derived.died),
            Field::Open => FieldValue::Bool(e.open),
            Field::TotalCharges => FieldValue::Num(e.derived.total_charges.as_f64()),
            Field::TotalCosts => FieldValue::Num(e.derived.total_costs.as_f64()),
            Field::ContributionMargin => FieldValue::Num(e.derived.contribution_margin.as_f64()),
            Field::Procedure => codes_of(e, EventType::Procedure),
            Field::Diagnosis => codes_of(e, EventType::Diagnosis),
        }
    }
}

fn codes_of(e: &EpisodeOfCare, t: EventType) -> FieldValue<'_> {
    FieldValue::Set(
        e.events
            .iter()
            .filter(|ev| ev.event_type == t)
            .flat_map(|ev| [ev.attr_str("code"), ev.attr_str("name")])
            .flatten()
            .collect(),
    )
}

fn compare(v: &FieldValue<'_>, op: CmpOp, lit: &Literal) -> bool {
    match (v, lit) {
        (FieldValue::Absent, _) => false,
        (FieldValue::Num(x), Literal::Num(y)) => match op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            CmpOp::Lt => x < y,
            CmpOp::Le => x <= y,
            CmpOp::Gt => x > y,
            CmpOp::Ge => x >= y,
        },
        (FieldValue::Str(x), Literal::Str(y)) => match op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            _ => false,
        },
        (FieldValue::Bool(x), Literal::Bool(y)) => match op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            _ => false,
        },
        (FieldValue::Set(items), Literal::Str(y)) => {
            let hit = items.iter().any(|s| s == y);
            match op {
                CmpOp::Eq => hit,
                CmpOp::Ne => !hit,
                _ => false,
            }
        }
        // Unreachable for type-checked ASTs; false keeps evaluation total.
        _ => false,
    }
}

/// Evaluates a type-checked filter against an episode and its patient.
///
/// Comparisons on absent values (the LOS of an open episode, the age of an
/// unknown patient) are false, so `NOT` over them is true.
pub fn evaluate(ast: &FilterAst, e: &EpisodeOfCare, p: Option<&Patient>) -> bool {
    match ast {
        FilterAst::Cmp { field, op, value } => compare(&FieldValue::of(*field, e, p), *op, value),
        FilterAst::And(a, b) => evaluate(a, e, p) && evaluate(b, e, p),
        FilterAst::Or(a, b) => evaluate(a, e, p) || evaluate(b, e, p),
        FilterAst::Not(a) => !evaluate(a, e, p),
    }
}
