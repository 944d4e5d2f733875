//! The feasibility check against the original problem.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{evaluate, SliceEnv, StandardForm};

pub const DEFAULT_EPSILON: f64 = 1e-6;
/// Integer variables must lie this close to an integer, whatever `ε` is.
pub const INTEGRALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "kebab-case")]
pub enum ConstraintId {
    Inequality(usize),
    Equality(usize),
    LowerBound(usize),
    UpperBound(usize),
    Integrality(usize),
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintId::Inequality(i) => write!(f, "inequality {i}"),
            ConstraintId::Equality(i) => write!(f, "equality {i}"),
            ConstraintId::LowerBound(i) => write!(f, "lower bound of variable {i}"),
            ConstraintId::UpperBound(i) => write!(f, "upper bound of variable {i}"),
            ConstraintId::Integrality(i) => write!(f, "integrality of variable {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub id: ConstraintId,
    /// Signed for inequalities and bounds, absolute for equalities and
    /// integrality. Not finite when the constraint cannot be evaluated.
    #[serde(with = "crate::solver::nullable")]
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub v: bool,
    pub residuals: Vec<Residual>,
    pub epsilon: f64,
    /// Why `v` is false when no residual explains it.
    pub reason: Option<String>,
}

impl FeasibilityResult {
    pub fn worst(&self) -> Option<&Residual> {
        self.residuals
            .iter()
            .filter(|r| !r.pass)
            .max_by(|a, b| a.value.abs().total_cmp(&b.value.abs()))
    }

    /// Largest violation over all residuals; infinite on evaluation failure.
    pub fn max_violation(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| if r.value.is_finite() { r.value.max(0.0) } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Checks `x_star` against the original constraints, bounds and
/// integrality.
pub fn validate_feasibility(original: &StandardForm, x_star: &[f64], epsilon: f64) -> FeasibilityResult {
    let fail = |reason: String| FeasibilityResult {
        v: false,
        residuals: Vec::new(),
        epsilon,
        reason: Some(reason),
    };
    if !(epsilon > 0.0) {
        return fail(format!("tolerance {epsilon} is not positive"));
    }
    if x_star.len() != original.variables.len() {
        return fail(format!(
            "point has {} coordinates, problem has {} variables",
            x_star.len(),
            original.variables.len()
        ));
    }
    let names = original.names();
    let env = SliceEnv { names: &names, values: x_star };
    let mut residuals = Vec::new();
    let mut reason = None;
    for (i, c) in original.inequalities.iter().enumerate() {
        let value = evaluate(&c.lhs, &env).unwrap_or_else(|e| {
            reason.get_or_insert_with(|| format!("inequality {i}: {e}"));
            f64::NAN
        });
        residuals.push(Residual {
            id: ConstraintId::Inequality(i),
            value,
            pass: value <= epsilon,
        });
    }
    for (i, c) in original.equalities.iter().enumerate() {
        let value = evaluate(&c.lhs, &env).map(f64::abs).unwrap_or_else(|e| {
            reason.get_or_insert_with(|| format!("equality {i}: {e}"));
            f64::NAN
        });
        residuals.push(Residual {
            id: ConstraintId::Equality(i),
            value,
            pass: value <= epsilon,
        });
    }
    for (i, (v, &x)) in original.variables.iter().zip(x_star).enumerate() {
        if v.lower.is_finite() {
            let value = v.lower - x;
            residuals.push(Residual {
                id: ConstraintId::LowerBound(i),
                value,
                pass: value <= epsilon,
            });
        }
        if v.upper.is_finite() {
            let value = x - v.upper;
            residuals.push(Residual {
                id: ConstraintId::UpperBound(i),
                value,
                pass: value <= epsilon,
            });
        }
        if v.var_type.is_discrete() {
            let value = (x - x.round()).abs();
            residuals.push(Residual {
                id: ConstraintId::Integrality(i),
                value,
                pass: value <= INTEGRALITY_TOLERANCE,
            });
        }
    }
    if x_star.iter().any(|x| !x.is_finite()) {
        reason.get_or_insert_with(|| "point has a non-finite coordinate".into());
    }
    FeasibilityResult {
        v: reason.is_none() && residuals.iter().all(|r| r.pass),
        residuals,
        epsilon,
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_expression, Constraint, VarType, Variable};

    fn problem(vars: Vec<Variable>, le: &[&str], eq: &[&str]) -> StandardForm {
        let c = |s: &&str| parse_expression(s, &vars).unwrap();
        StandardForm {
            objective: parse_expression("0", &vars).unwrap(),
            inequalities: le.iter().map(|s| Constraint::le(c(s))).collect(),
            equalities: eq.iter().map(|s| Constraint::eq(c(s))).collect(),
            metadata: Default::default(),
            variables: vars,
        }
    }

    #[test]
    fn boundary_point_is_feasible() {
        let p = problem(vec![Variable::free("x")], &["1 - x"], &[]);
        assert!(validate_feasibility(&p, &[1.0], 1e-6).v);
    }

    #[test]
    fn small_violation_is_caught() {
        let p = problem(vec![Variable::free("x")], &["1 - x"], &[]);
        let r = validate_feasibility(&p, &[0.999], 1e-6);
        assert!(!r.v);
        let w = r.worst().unwrap();
        assert_eq!(w.id, ConstraintId::Inequality(0));
        assert!((w.value - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn equality_within_tolerance() {
        let p = problem(vec![Variable::free("x1"), Variable::free("x2")], &[], &["x1 + x2 - 1"]);
        assert!(validate_feasibility(&p, &[0.5, 0.5 + 1e-8], 1e-6).v);
        assert!(!validate_feasibility(&p, &[0.5, 0.5 + 1e-5], 1e-6).v);
    }

    #[test]
    fn bounds_and_integrality() {
        let vars = vec![
            Variable::continuous("p", 0.0, 1.0),
            Variable::continuous("n", 0.0, 10.0).with_type(VarType::Integer),
        ];
        let p = problem(vars, &[], &[]);
        assert!(validate_feasibility(&p, &[1.0, 3.0], 1e-6).v);
        let r = validate_feasibility(&p, &[1.1, 3.0], 1e-6);
        assert_eq!(r.worst().unwrap().id, ConstraintId::UpperBound(0));
        let r = validate_feasibility(&p, &[0.5, 2.5], 1e-6);
        assert_eq!(r.worst().unwrap().id, ConstraintId::Integrality(1));
        assert!(validate_feasibility(&p, &[0.5, 3.0 + 1e-7], 1e-6).v);
    }

    #[test]
    fn domain_error_is_infeasible_with_reason() {
        let p = problem(vec![Variable::free("x")], &["log(x)"], &[]);
        let r = validate_feasibility(&p, &[-1.0], 1e-6);
        assert!(!r.v);
        assert!(r.reason.unwrap().contains("inequality 0"));
    }

    #[test]
    fn dimension_mismatch() {
        let p = problem(vec![Variable::free("x")], &[], &[]);
        assert!(!validate_feasibility(&p, &[1.0, 2.0], 1e-6).v);
    }
}
