//! Canonical JSON serialization of a problem.
//!
//! ```json
//! {
//!   "id": "p1",
//!   "variables": [{"name": "p", "type": "continuous", "lower": 0, "upper": null, "unit": "W"}],
//!   "objective": {"sense": "minimize", "expr": "-log(1 + p)"},
//!   "constraints": [{"expr": "p - 10", "relation": "<="}]
//! }
//! ```
//!
//! A `null` bound is infinite. Constraint relations compare `expr` against
//! zero; documents written by [`ModelDocument::from_standard`] only use
//! `<=` and `=`, but any non-strict relation is accepted on input.
//!
//! The optional `sca` section marks a convex surrogate: the top-level model
//! is the surrogate at `anchor`, `original` is the problem it approximates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::standard::{
    canonicalize, parse_expression, Metadata, ModelError, Provenance, RawConstraint, RawRelation, Sense, StandardForm, VarType, Variable,
};
use super::Expr;
use crate::convexify::Strategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDoc {
    pub name: String,
    #[serde(rename = "type", default = "continuous")]
    pub var_type: VarType,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub unit: String,
}

fn continuous() -> VarType {
    VarType::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveDoc {
    pub sense: Sense,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDoc {
    pub expr: String,
    pub relation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaSection {
    pub original: Box<ModelDocument>,
    pub strategy: Strategy,
    pub anchor: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub variables: Vec<VariableDoc>,
    pub objective: ObjectiveDoc,
    #[serde(default)]
    pub constraints: Vec<ConstraintDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sca: Option<ScaSection>,
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl ModelDocument {
    pub fn from_standard(p: &StandardForm) -> ModelDocument {
        ModelDocument {
            id: (!p.metadata.problem_id.is_empty()).then(|| p.metadata.problem_id.clone()),
            variables: p
                .variables
                .iter()
                .map(|v| VariableDoc {
                    name: v.name.clone(),
                    var_type: v.var_type,
                    lower: finite_or_none(v.lower),
                    upper: finite_or_none(v.upper),
                    unit: v.unit.clone(),
                })
                .collect(),
            objective: ObjectiveDoc {
                sense: Sense::Minimize,
                expr: p.objective.to_string(),
            },
            constraints: p
                .constraints()
                .map(|c| ConstraintDoc {
                    expr: c.lhs.to_string(),
                    relation: c.relation.to_string(),
                    source: match &c.provenance {
                        Provenance::Source(s) => Some(s.clone()),
                        Provenance::Derived => None,
                    },
                })
                .collect(),
            sca: None,
        }
    }

    pub fn to_standard(&self) -> Result<StandardForm, ModelError> {
        let variables: Vec<Variable> = self
            .variables
            .iter()
            .map(|v| Variable {
                name: v.name.clone(),
                var_type: v.var_type,
                lower: v.lower.unwrap_or(if v.var_type == VarType::Binary { 0.0 } else { f64::NEG_INFINITY }),
                upper: v.upper.unwrap_or(if v.var_type == VarType::Binary { 1.0 } else { f64::INFINITY }),
                unit: v.unit.clone(),
            })
            .collect();
        let objective = parse_expression(&self.objective.expr, &variables)?;
        let raw = self
            .constraints
            .iter()
            .map(|c| {
                Ok(RawConstraint {
                    lhs: parse_expression(&c.expr, &variables)?,
                    relation: RawRelation::parse(&c.relation)?,
                    rhs: Expr::Const(0.0),
                    provenance: c.source.clone().map(Provenance::Source).unwrap_or_default(),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let metadata = Metadata {
            problem_id: self.id.clone().unwrap_or_default(),
            text_digest: String::new(),
        };
        canonicalize(self.objective.sense, objective, raw, variables, metadata)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model documents always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<ModelDocument, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{
        "id": "rate",
        "variables": [{"name": "p", "type": "continuous", "lower": 0, "upper": null, "unit": "W"}],
        "objective": {"sense": "maximize", "expr": "log(1 + p)"},
        "constraints": [{"expr": "p - 10", "relation": "<="}, {"expr": "2 - p", "relation": ">="}]
    }"#;

    #[test]
    fn document_round_trip() {
        let doc = ModelDocument::from_json(DOC).unwrap();
        let p = doc.to_standard().unwrap();
        assert_eq!(p.objective.to_string(), "-log(1 + p)");
        assert_eq!(p.variables[0].upper, f64::INFINITY);
        assert_eq!(p.m(), 2);
        let again = ModelDocument::from_standard(&p);
        assert_eq!(again.to_standard().unwrap(), p);
        let text = again.to_json();
        assert!(text.contains("\"upper\":null"), "{text}");
        assert_eq!(ModelDocument::from_json(&text).unwrap(), again);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = DOC.replace("\"id\"", "\"ident\"");
        assert!(ModelDocument::from_json(&bad).is_err());
    }

    #[test]
    fn strict_relation_in_document_rejected() {
        let bad = DOC.replace("\"<=\"", "\"<\"");
        let doc = ModelDocument::from_json(&bad).unwrap();
        assert!(matches!(doc.to_standard(), Err(ModelError::StrictInequality(_))));
    }
}
