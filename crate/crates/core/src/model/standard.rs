use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::Expr;
use super::parse::{parse_with, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarType {
    Continuous,
    Integer,
    Binary,
}

impl VarType {
    pub fn is_discrete(self) -> bool {
        !matches!(self, VarType::Continuous)
    }
}

impl fmt::Display for VarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarType::Continuous => "continuous",
            VarType::Integer => "integer",
            VarType::Binary => "binary",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub var_type: VarType,
    /// `-inf` when unbounded below.
    pub lower: f64,
    /// `+inf` when unbounded above.
    pub upper: f64,
    pub unit: String,
}

impl Variable {
    pub fn continuous(name: impl Into<String>, lower: f64, upper: f64) -> Variable {
        Variable {
            name: name.into(),
            var_type: VarType::Continuous,
            lower,
            upper,
            unit: String::new(),
        }
    }

    pub fn free(name: impl Into<String>) -> Variable {
        Variable::continuous(name, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn with_type(mut self, t: VarType) -> Variable {
        self.var_type = t;
        self
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Variable {
        self.unit = unit.into();
        self
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lower).min(self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    /// `lhs <= 0`
    #[serde(rename = "<=")]
    Le,
    /// `lhs = 0`
    #[serde(rename = "=")]
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Source(String),
    #[default]
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub lhs: Expr,
    pub relation: Relation,
    pub provenance: Provenance,
}

impl Constraint {
    pub fn le(lhs: Expr) -> Constraint {
        Constraint {
            lhs,
            relation: Relation::Le,
            provenance: Provenance::Derived,
        }
    }

    pub fn eq(lhs: Expr) -> Constraint {
        Constraint {
            lhs,
            relation: Relation::Eq,
            provenance: Provenance::Derived,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metadata {
    pub problem_id: String,
    /// Hex SHA-256 of the scenario text, empty when unknown.
    pub text_digest: String,
}

/// `minimize objective s.t. inequalities <= 0, equalities = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm {
    pub variables: Vec<Variable>,
    pub objective: Expr,
    pub inequalities: Vec<Constraint>,
    pub equalities: Vec<Constraint>,
    pub metadata: Metadata,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("in `{text}`: {source}")]
    Parse { text: String, source: ParseError },
    #[error("strict inequality `{0}` is unsupported")]
    StrictInequality(String),
    #[error("variable `{0}` is referenced but not declared")]
    UndeclaredVariable(String),
    #[error("variable `{0}` is declared twice")]
    DuplicateVariable(String),
    #[error("`{0}` is not a valid identifier")]
    InvalidName(String),
    #[error("variable `{name}` has invalid bounds [{lower}, {upper}]")]
    InvalidBounds { name: String, lower: f64, upper: f64 },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("model has no variables")]
    NoVariables,
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !super::expr::CALL_ATOMS.iter().any(|(n, _)| *n == s)
}

/// Parses `text` against the declared variables.
pub fn parse_expression(text: &str, vars: &[Variable]) -> Result<Expr, ModelError> {
    parse_with(text, &|n| vars.iter().any(|v| v.name == n)).map_err(|source| match source {
        ParseError::UnknownIdentifier { name, .. } => ModelError::UndeclaredVariable(name),
        source => ModelError::Parse {
            text: text.to_string(),
            source,
        },
    })
}

impl StandardForm {
    pub fn m(&self) -> usize {
        self.inequalities.len()
    }

    pub fn n(&self) -> usize {
        self.equalities.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn has_discrete(&self) -> bool {
        self.variables.iter().any(|v| v.var_type.is_discrete())
    }

    pub fn constraints(&self) -> impl Iterator<Item = &Constraint> {
        self.inequalities.iter().chain(self.equalities.iter())
    }

    /// Checks declaration and reference invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.variables.is_empty() {
            return Err(ModelError::NoVariables);
        }
        let mut seen = BTreeSet::new();
        for v in &self.variables {
            if !is_identifier(&v.name) {
                return Err(ModelError::InvalidName(v.name.clone()));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(ModelError::DuplicateVariable(v.name.clone()));
            }
            let binary_ok = v.var_type != VarType::Binary || (v.lower >= 0.0 && v.upper <= 1.0);
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper || !binary_ok {
                return Err(ModelError::InvalidBounds {
                    name: v.name.clone(),
                    lower: v.lower,
                    upper: v.upper,
                });
            }
        }
        let exprs = std::iter::once(&self.objective).chain(self.constraints().map(|c| &c.lhs));
        for e in exprs {
            if let Some(missing) = e.variables().into_iter().find(|n| !seen.contains(n.as_str())) {
                return Err(ModelError::UndeclaredVariable(missing));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawRelation {
    Le,
    Ge,
    Eq,
    Lt,
    Gt,
}

impl RawRelation {
    pub fn parse(s: &str) -> Result<RawRelation, ModelError> {
        Ok(match s.trim() {
            "<=" | "≤" | "=<" => RawRelation::Le,
            ">=" | "≥" | "=>" => RawRelation::Ge,
            "=" | "==" => RawRelation::Eq,
            "<" => RawRelation::Lt,
            ">" => RawRelation::Gt,
            other => return Err(ModelError::UnknownRelation(other.to_string())),
        })
    }

    fn symbol(self) -> &'static str {
        match self {
            RawRelation::Le => "<=",
            RawRelation::Ge => ">=",
            RawRelation::Eq => "=",
            RawRelation::Lt => "<",
            RawRelation::Gt => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawConstraint {
    pub lhs: Expr,
    pub relation: RawRelation,
    pub rhs: Expr,
    pub provenance: Provenance,
}

impl RawConstraint {
    pub fn new(lhs: Expr, relation: RawRelation, rhs: Expr) -> RawConstraint {
        RawConstraint {
            lhs,
            relation,
            rhs,
            provenance: Provenance::Derived,
        }
    }
}

/// Rewrites a problem into minimize / `<= 0` / `= 0` form.
pub fn canonicalize(
    sense: Sense,
    objective: Expr,
    raw: Vec<RawConstraint>,
    variables: Vec<Variable>,
    metadata: Metadata,
) -> Result<StandardForm, ModelError> {
    let objective = match sense {
        Sense::Minimize => objective,
        Sense::Maximize => Expr::neg(objective),
    };
    let mut inequalities = Vec::new();
    let mut equalities = Vec::new();
    for c in raw {
        let (lhs, relation) = match c.relation {
            RawRelation::Le => (Expr::sub(c.lhs, c.rhs), Relation::Le),
            RawRelation::Ge => (Expr::sub(c.rhs, c.lhs), Relation::Le),
            RawRelation::Eq => (Expr::sub(c.lhs, c.rhs), Relation::Eq),
            RawRelation::Lt | RawRelation::Gt => {
                return Err(ModelError::StrictInequality(format!(
                    "{} {} {}",
                    c.lhs,
                    c.relation.symbol(),
                    c.rhs
                )))
            }
        };
        let con = Constraint {
            lhs,
            relation,
            provenance: c.provenance,
        };
        match relation {
            Relation::Le => inequalities.push(con),
            Relation::Eq => equalities.push(con),
        }
    }
    let p = StandardForm {
        variables,
        objective,
        inequalities,
        equalities,
        metadata,
    };
    p.validate()?;
    Ok(p)
}

impl StandardForm {
    /// The problem as raw input to [`canonicalize`]; canonicalizing the
    /// result reproduces `self`.
    pub fn as_raw(&self) -> (Sense, Expr, Vec<RawConstraint>) {
        let raw = self
            .constraints()
            .map(|c| RawConstraint {
                lhs: c.lhs.clone(),
                relation: match c.relation {
                    Relation::Le => RawRelation::Le,
                    Relation::Eq => RawRelation::Eq,
                },
                rhs: Expr::Const(0.0),
                provenance: c.provenance.clone(),
            })
            .collect();
        (Sense::Minimize, self.objective.clone(), raw)
    }
}

impl fmt::Display for StandardForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "minimize {}", self.objective)?;
        if self.m() + self.n() > 0 {
            writeln!(f, "subject to")?;
        }
        for c in self.constraints() {
            writeln!(f, "  {} {} 0", c.lhs, c.relation)?;
        }
        for v in &self.variables {
            writeln!(f, "  {} <= {} <= {}  ({})", v.lower, v.name, v.upper, v.var_type)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> Vec<Variable> {
        vec![Variable::continuous("x", 0.0, 10.0)]
    }

    fn e(t: &str) -> Expr {
        parse_expression(t, &vars()).unwrap()
    }

    #[test]
    fn maximize_flips_sign() {
        let p = canonicalize(Sense::Maximize, e("log(1 + x)"), vec![], vars(), Metadata::default()).unwrap();
        assert_eq!(p.objective, e("-log(1 + x)"));
    }

    #[test]
    fn ge_is_rewritten_as_le() {
        let raw = vec![RawConstraint::new(e("x"), RawRelation::Ge, e("1"))];
        let p = canonicalize(Sense::Minimize, e("x"), raw, vars(), Metadata::default()).unwrap();
        assert_eq!(p.inequalities[0].lhs, e("1 - x"));
        assert_eq!(p.m(), 1);
        assert_eq!(p.n(), 0);
    }

    #[test]
    fn strict_inequality_rejected() {
        let raw = vec![RawConstraint::new(e("x"), RawRelation::Lt, e("5"))];
        let err = canonicalize(Sense::Minimize, e("x"), raw, vars(), Metadata::default()).unwrap_err();
        assert!(matches!(err, ModelError::StrictInequality(_)));
    }

    #[test]
    fn idempotent_on_standard_input() {
        let raw = vec![
            RawConstraint::new(e("x^2 - 4"), RawRelation::Le, e("0")),
            RawConstraint::new(e("x - 1"), RawRelation::Eq, e("0")),
        ];
        let p = canonicalize(Sense::Minimize, e("x"), raw, vars(), Metadata::default()).unwrap();
        let (s, o, r) = p.as_raw();
        let q = canonicalize(s, o, r, p.variables.clone(), p.metadata.clone()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn validation_catches_bad_declarations() {
        let mut p = canonicalize(Sense::Minimize, e("x"), vec![], vars(), Metadata::default()).unwrap();
        p.variables.push(Variable::continuous("b", 0.0, 2.0).with_type(VarType::Binary));
        assert!(matches!(p.validate(), Err(ModelError::InvalidBounds { .. })));
        p.variables.pop();
        p.objective = Expr::var("zz");
        assert_eq!(p.validate(), Err(ModelError::UndeclaredVariable("zz".into())));
        p.objective = Expr::var("x");
        p.variables.push(Variable::free("x"));
        assert_eq!(p.validate(), Err(ModelError::DuplicateVariable("x".into())));
    }
}
