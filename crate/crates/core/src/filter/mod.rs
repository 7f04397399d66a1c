//! Drill-down filter expression language.
//!
//! A filter is a boolean combination of comparisons between an episode field
//! and a literal, e.g. `department = "cardiology" AND los >= 7`. The same text
//! form is used by HTTP queries, rule cohorts and dashboard filter tokens.
//!
//! Precedence is `NOT` > `AND` > `OR`, binary connectives associate to the
//! left, keywords are case-insensitive and field names are case-sensitive.

mod eval;
mod parser;

use std::fmt;

use thiserror::Error;

pub use eval::{evaluate, FieldValue};
pub use parser::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("syntax error at byte {offset}: expected one of [{}], found {found}", expected.join(", "))]
    Syntax {
        offset: usize,
        expected: Vec<&'static str>,
        found: String,
    },
    #[error("unknown field {name:?} at byte {offset}")]
    UnknownField { offset: usize, name: String },
    #[error("type mismatch at byte {offset}: {message}")]
    TypeMismatch { offset: usize, message: String },
}

impl FilterError {
    pub fn offset(&self) -> usize {
        match self {
            FilterError::Syntax { offset, .. }
            | FilterError::UnknownField { offset, .. }
            | FilterError::TypeMismatch { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldType {
    Num,
    Str,
    Bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Field {
    Los,
    Department,
    Gender,
    Age,
    Died,
    TotalCharges,
    TotalCosts,
    ContributionMargin,
    /// True when any PROCEDURE event has a matching `code` or `name`.
    Procedure,
    /// True when any DIAGNOSIS event has a matching `code` or `name`.
    Diagnosis,
    Open,
}

impl Field {
    pub const ALL: [Field; 11] = [
        Field::Los,
        Field::Department,
        Field::Gender,
        Field::Age,
        Field::Died,
        Field::TotalCharges,
        Field::TotalCosts,
        Field::ContributionMargin,
        Field::Procedure,
        Field::Diagnosis,
        Field::Open,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Los => "los",
            Field::Department => "department",
            Field::Gender => "gender",
            Field::Age => "age",
            Field::Died => "died",
            Field::TotalCharges => "total_charges",
            Field::TotalCosts => "total_costs",
            Field::ContributionMargin => "contribution_margin",
            Field::Procedure => "procedure",
            Field::Diagnosis => "diagnosis",
            Field::Open => "open",
        }
    }

    pub fn from_name(name: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn field_type(self) -> FieldType {
        match self {
            Field::Los
            | Field::Age
            | Field::TotalCharges
            | Field::TotalCosts
            | Field::ContributionMargin => FieldType::Num,
            Field::Department | Field::Gender | Field::Procedure | Field::Diagnosis => {
                FieldType::Str
            }
            Field::Died | Field::Open => FieldType::Bool,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Lt,
        CmpOp::Le,
        CmpOp::Gt,
        CmpOp::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_equality(self) -> bool {
        matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Num(f64),
    Str(String),
    Bool(bool),
}

impl Literal {
    pub fn literal_type(&self) -> FieldType {
        match self {
            Literal::Num(_) => FieldType::Num,
            Literal::Str(_) => FieldType::Str,
            Literal::Bool(_) => FieldType::Bool,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterAst {
    Cmp {
        field: Field,
        op: CmpOp,
        value: Literal,
    },
    And(Box<FilterAst>, Box<FilterAst>),
    Or(Box<FilterAst>, Box<FilterAst>),
    Not(Box<FilterAst>),
}

impl FilterAst {
    pub fn cmp(field: Field, op: CmpOp, value: Literal) -> Self {
        FilterAst::Cmp { field, op, value }
    }

    pub fn and(a: FilterAst, b: FilterAst) -> Self {
        FilterAst::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: FilterAst, b: FilterAst) -> Self {
        FilterAst::Or(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(a: FilterAst) -> Self {
        FilterAst::Not(Box::new(a))
    }

    fn precedence(&self) -> u8 {
        match self {
            FilterAst::Or(..) => 1,
            FilterAst::And(..) => 2,
            FilterAst::Not(_) => 3,
            FilterAst::Cmp { .. } => 4,
        }
    }

    /// Checks the typing rules an AST built by hand might violate.
    pub fn type_check(&self) -> Result<(), FilterError> {
        match self {
            FilterAst::Cmp { field, op, value } => check_comparison(*field, *op, value, 0),
            FilterAst::And(a, b) | FilterAst::Or(a, b) => {
                a.type_check()?;
                b.type_check()
            }
            FilterAst::Not(a) => a.type_check(),
        }
    }
}

pub(crate) fn check_comparison(
    field: Field,
    op: CmpOp,
    value: &Literal,
    offset: usize,
) -> Result<(), FilterError> {
    let ft = field.field_type();
    if value.literal_type() != ft {
        return Err(FilterError::TypeMismatch {
            offset,
            message: format!(
                "field {} expects a {} literal",
                field.name(),
                type_name(ft)
            ),
        });
    }
    if ft != FieldType::Num && !op.is_equality() {
        return Err(FilterError::TypeMismatch {
            offset,
            message: format!(
                "operator {} applies only to numeric fields, {} is {}",
                op.symbol(),
                field.name(),
                type_name(ft)
            ),
        });
    }
    Ok(())
}

fn type_name(t: FieldType) -> &'static str {
    match t {
        FieldType::Num => "numeric",
        FieldType::Str => "string",
        FieldType::Bool => "boolean",
    }
}

fn write_literal(f: &mut fmt::Formatter<'_>, lit: &Literal) -> fmt::Result {
    match lit {
        Literal::Num(n) => write!(f, "{n}"),
        Literal::Bool(b) => f.write_str(if *b { "true" } else { "false" }),
        Literal::Str(s) => {
            f.write_str("\"")?;
            for c in s.chars() {
                match c {
                    '"' => f.write_str("\\\"")?,
                    '\\' => f.write_str("\\\\")?,
                    '\n' => f.write_str("\\n")?,
                    '\t' => f.write_str("\\t")?,
                    '\r' => f.write_str("\\r")?,
                    c => write!(f, "{c}")?,
                }
            }
            f.write_str("\"")
        }
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    child: &FilterAst,
    parenthesize: bool,
) -> fmt::Result {
    if parenthesize {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

/// Minimal-parenthesis rendering that parses back to the same tree.
impl fmt::Display for FilterAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.precedence();
        match self {
            FilterAst::Cmp { field, op, value } => {
                write!(f, "{} {} ", field.name(), op.symbol())?;
                write_literal(f, value)
            }
            FilterAst::And(a, b) | FilterAst::Or(a, b) => {
                let kw = if matches!(self, FilterAst::And(..)) {
                    " AND "
                } else {
                    " OR "
                };
                write_child(f, a, a.precedence() < p)?;
                f.write_str(kw)?;
                write_child(f, b, b.precedence() <= p)
            }
            FilterAst::Not(a) => {
                f.write_str("NOT ")?;
                write_child(f, a, a.precedence() < p)
            }
        }
    }
}

pub fn unparse(ast: &FilterAst) -> String {
    ast.to_string()
}
