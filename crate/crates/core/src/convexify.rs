//! Convex surrogates of non-convex problems.
//!
//! Three transformations compose: continuous relaxation of discrete
//! variables, Lagrangian relaxation of non-convex inequalities into the
//! objective, and first-order (SCA) linearization of whatever non-convex
//! terms remain. Linearization touches only offending additive terms of a
//! component; a component that is not a sum is linearized whole.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curvature::{analyze_problem, curvature_of, Bounds, ConvexityReport, Curvature, Location};
use crate::model::{differentiate, evaluate, Constraint, EvalError, Expr, SliceEnv, StandardForm, VarType, Variable};

/// How the first SCA anchor is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AnchorRule {
    /// The caller's start point, projected onto the box.
    Start,
    /// The box center, ignoring the start point.
    Recentered,
    /// The box center plus a deterministic offset drawn from `cycle`.
    Perturbed { cycle: u32 },
    Point { values: BTreeMap<String, f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Sca { anchor: AnchorRule },
    /// One multiplier per relaxed inequality, in offender order.
    Lagrangian { multipliers: Vec<f64> },
    ContinuousRelaxation,
    Composite { parts: Vec<Strategy> },
}

impl Strategy {
    pub fn sca() -> Strategy {
        Strategy::Sca { anchor: AnchorRule::Start }
    }

    fn flatten<'a>(&'a self, out: &mut Vec<&'a Strategy>) {
        match self {
            Strategy::Composite { parts } => parts.iter().for_each(|p| p.flatten(out)),
            other => out.push(other),
        }
    }

    fn parts(&self) -> Vec<&Strategy> {
        let mut out = Vec::new();
        self.flatten(&mut out);
        out
    }

    pub fn relaxes_integrality(&self) -> bool {
        self.parts().iter().any(|p| matches!(p, Strategy::ContinuousRelaxation))
    }

    pub fn anchor_rule(&self) -> Option<&AnchorRule> {
        self.parts().into_iter().find_map(|p| match p {
            Strategy::Sca { anchor } => Some(anchor),
            _ => None,
        })
    }

    pub fn multipliers(&self) -> Option<&[f64]> {
        self.parts().into_iter().find_map(|p| match p {
            Strategy::Lagrangian { multipliers } => Some(multipliers.as_slice()),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ConvexifyError> {
        if let Some(m) = self.multipliers() {
            if let Some(bad) = m.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
                return Err(ConvexifyError::InvalidStrategy(format!("multiplier {bad} is not a finite nonnegative number")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Sca { anchor } => match anchor {
                AnchorRule::Start => write!(f, "sca(start)"),
                AnchorRule::Recentered => write!(f, "sca(recentered)"),
                AnchorRule::Perturbed { cycle } => write!(f, "sca(perturbed {cycle})"),
                AnchorRule::Point { .. } => write!(f, "sca(point)"),
            },
            Strategy::Lagrangian { multipliers } => write!(f, "lagrangian{multipliers:?}"),
            Strategy::ContinuousRelaxation => write!(f, "continuous-relaxation"),
            Strategy::Composite { parts } => {
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("+")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexifyError {
    #[error("cannot linearize `{expr}` at the anchor: {source}")]
    Domain { expr: String, source: EvalError },
    #[error("surrogate is still non-convex at {location}: {reason}")]
    StillNonConvex { location: Location, reason: String },
    #[error("invalid strategy: {0}")]
    InvalidStrategy(String),
    #[error("anchor has {got} coordinates, problem has {want} variables")]
    AnchorDimension { got: usize, want: usize },
}

/// Center of a variable's box: the midpoint when bounded, one unit inside
/// a single finite bound, zero when free.
pub fn box_center(v: &Variable) -> f64 {
    match (v.lower.is_finite(), v.upper.is_finite()) {
        (true, true) => 0.5 * (v.lower + v.upper),
        (true, false) => v.lower + 1.0,
        (false, true) => v.upper - 1.0,
        (false, false) => 0.0,
    }
}

pub fn project(vars: &[Variable], x: &[f64]) -> Vec<f64> {
    vars.iter().zip(x).map(|(v, &xi)| v.clamp(xi)).collect()
}

pub fn resolve_anchor(rule: &AnchorRule, vars: &[Variable], x0: &[f64]) -> Vec<f64> {
    let center: Vec<f64> = vars.iter().map(box_center).collect();
    match rule {
        AnchorRule::Start if x0.len() == vars.len() => project(vars, x0),
        AnchorRule::Start | AnchorRule::Recentered => center,
        AnchorRule::Perturbed { cycle } => {
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(*cycle));
            let moved: Vec<f64> = vars
                .iter()
                .zip(&center)
                .map(|(v, c)| {
                    let width = if v.lower.is_finite() && v.upper.is_finite() { v.upper - v.lower } else { 2.0 };
                    c + 0.25 * width * rng.random_range(-1.0..=1.0)
                })
                .collect();
            project(vars, &moved)
        }
        AnchorRule::Point { values } => {
            let pt: Vec<f64> = vars
                .iter()
                .zip(&center)
                .map(|(v, c)| values.get(&v.name).copied().unwrap_or(*c))
                .collect();
            project(vars, &pt)
        }
    }
}

/// `f(x_m) + grad f(x_m) . (x - x_m)`. An expression the rules prove affine
/// is returned unchanged.
pub fn sca_surrogate(e: &Expr, names: &[String], x_m: &[f64]) -> Result<Expr, ConvexifyError> {
    let a = curvature_of(e, &Bounds::default());
    if a.curvature.is_affine() && !a.sampled {
        return Ok(e.clone());
    }
    let env = SliceEnv { names, values: x_m };
    let domain = |source| ConvexifyError::Domain { expr: e.to_string(), source };
    let f0 = evaluate(e, &env).map_err(domain)?;
    let mut terms = vec![Expr::Const(f0)];
    for (name, &xm) in names.iter().zip(x_m) {
        if !e.depends_on(name) {
            continue;
        }
        let g = evaluate(&differentiate(e, name), &env).map_err(domain)?;
        if g != 0.0 {
            terms.push(Expr::product(vec![
                Expr::Const(g),
                Expr::sub(Expr::Var(name.clone()), Expr::Const(xm)),
            ]));
        }
    }
    Ok(Expr::sum(terms))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    Unchanged,
    /// Number of additive terms replaced by their tangent.
    Linearized { terms: usize },
    /// Moved into the objective with the given multiplier.
    Relaxed { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMap {
    /// Position in the surrogate, absent when the component was relaxed away.
    pub surrogate: Option<Location>,
    pub original: Location,
    pub change: Change,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexifiedProblem {
    pub surrogate: StandardForm,
    pub strategy: Strategy,
    pub anchor: Vec<f64>,
    pub mapping: Vec<ComponentMap>,
    /// Variables whose type was relaxed to continuous.
    pub relaxed_variables: Vec<String>,
}

/// Resolves the strategy's anchor rule against `x0`, then convexifies.
pub fn convexify(
    p: &StandardForm,
    report: &ConvexityReport,
    strategy: &Strategy,
    x0: &[f64],
) -> Result<ConvexifiedProblem, ConvexifyError> {
    let anchor = match strategy.anchor_rule() {
        Some(rule) => resolve_anchor(rule, &p.variables, x0),
        None => resolve_anchor(&AnchorRule::Start, &p.variables, x0),
    };
    convexify_at(p, report, strategy, &anchor)
}

/// Convexifies with an explicit anchor, ignoring the strategy's anchor rule.
pub fn convexify_at(
    p: &StandardForm,
    report: &ConvexityReport,
    strategy: &Strategy,
    anchor: &[f64],
) -> Result<ConvexifiedProblem, ConvexifyError> {
    strategy.validate()?;
    if anchor.len() != p.variables.len() {
        return Err(ConvexifyError::AnchorDimension {
            got: anchor.len(),
            want: p.variables.len(),
        });
    }
    let names = p.names();
    let mut q = p.clone();

    let mut relaxed_variables = Vec::new();
    if strategy.relaxes_integrality() {
        for v in q.variables.iter_mut().filter(|v| v.var_type.is_discrete()) {
            v.var_type = VarType::Continuous;
            relaxed_variables.push(v.name.clone());
        }
    }

    // Lagrangian: move non-convex inequalities into the objective.
    let mut relaxed: BTreeMap<usize, f64> = BTreeMap::new();
    if let Some(multipliers) = strategy.multipliers() {
        let targets: BTreeSet<usize> = report
            .offenders
            .iter()
            .filter_map(|o| match o.location {
                Location::Inequality(i) => Some(i),
                _ => None,
            })
            .collect();
        for (k, i) in targets.into_iter().enumerate() {
            relaxed.insert(i, multipliers.get(k).copied().unwrap_or(1.0));
        }
    }
    let mut objective_terms: Vec<Expr> = p.objective.terms().into_iter().cloned().collect();
    for (&i, &lambda) in &relaxed {
        for t in p.inequalities[i].lhs.terms() {
            objective_terms.push(Expr::product(vec![Expr::Const(lambda), t.clone()]));
        }
    }
    q.objective = Expr::sum(objective_terms);
    let index_map: BTreeMap<usize, usize> = (0..p.m())
        .filter(|i| !relaxed.contains_key(i))
        .enumerate()
        .map(|(new, old)| (old, new))
        .collect();
    q.inequalities = index_map.keys().map(|&i| p.inequalities[i].clone()).collect();

    let mut mapping: Vec<ComponentMap> = Vec::new();
    let mut push_map = |surrogate: Option<Location>, original: Location, change: Change| {
        mapping.push(ComponentMap { surrogate, original, change })
    };

    let sca = strategy.anchor_rule().is_some();
    let bounds = Bounds::from_variables(&q.variables);
    // Offending terms named by the caller's report, per surrogate location.
    let mut named: BTreeMap<Location, Vec<Expr>> = BTreeMap::new();
    for o in &report.offenders {
        let loc = match &o.location {
            Location::Inequality(i) => match index_map.get(i) {
                Some(&j) => Location::Inequality(j),
                None => continue,
            },
            Location::Variable(_) => continue,
            other => other.clone(),
        };
        named.entry(loc).or_default().push(o.expr.clone());
    }

    let transform = |loc: Location, e: &Expr, ok: fn(Curvature) -> bool| -> Result<(Expr, usize), ConvexifyError> {
        if !sca {
            return Ok((e.clone(), 0));
        }
        let listed = named.get(&loc).cloned().unwrap_or_default();
        let bad = |t: &Expr| listed.contains(t) || !ok(curvature_of(t, &bounds).curvature);
        if listed.contains(e) || (!ok(curvature_of(e, &bounds).curvature) && !matches!(e, Expr::Sum(_))) {
            return Ok((sca_surrogate(e, &names, anchor)?, 1));
        }
        let terms = e.terms();
        let mut count = 0;
        let mut out = Vec::with_capacity(terms.len());
        for t in terms {
            if bad(t) {
                out.push(sca_surrogate(t, &names, anchor)?);
                count += 1;
            } else {
                out.push(t.clone());
            }
        }
        Ok((if count == 0 { e.clone() } else { Expr::sum(out) }, count))
    };

    let (obj, n) = transform(Location::Objective, &q.objective, Curvature::is_convex)?;
    q.objective = obj;
    push_map(Some(Location::Objective), Location::Objective, change_of(n));
    for (&old, &new) in &index_map {
        let c = &q.inequalities[new];
        let (lhs, n) = transform(Location::Inequality(new), &c.lhs, Curvature::is_convex)?;
        q.inequalities[new] = Constraint { lhs, ..c.clone() };
        push_map(Some(Location::Inequality(new)), Location::Inequality(old), change_of(n));
    }
    for (&i, &lambda) in &relaxed {
        push_map(None, Location::Inequality(i), Change::Relaxed { multiplier: lambda });
    }
    for j in 0..q.n() {
        let c = &q.equalities[j];
        let (lhs, n) = transform(Location::Equality(j), &c.lhs, Curvature::is_affine)?;
        q.equalities[j] = Constraint { lhs, ..c.clone() };
        push_map(Some(Location::Equality(j)), Location::Equality(j), change_of(n));
    }

    let check = analyze_problem(&q);
    if let Some(o) = check.offenders.first() {
        return Err(ConvexifyError::StillNonConvex {
            location: o.location.clone(),
            reason: o.reason.clone(),
        });
    }
    Ok(ConvexifiedProblem {
        surrogate: q,
        strategy: strategy.clone(),
        anchor: anchor.to_vec(),
        mapping,
        relaxed_variables,
    })
}

fn change_of(n: usize) -> Change {
    if n == 0 {
        Change::Unchanged
    } else {
        Change::Linearized { terms: n }
    }
}

/// Strategy for the given re-analysis attempt.
///
/// | attempt | strategy |
/// |---|---|
/// | 0 | SCA at the start point |
/// | 1 | SCA at the box center |
/// | 2 | Lagrangian (every multiplier 1.0), then SCA at the box center |
/// | k >= 3 | the three above in turn, anchored at a perturbed center |
///
/// Continuous relaxation is prepended whenever the report lists a discrete
/// variable.
pub fn select_strategy(report: &ConvexityReport, attempt: u32) -> Strategy {
    let relaxed_count = report
        .offenders
        .iter()
        .filter_map(|o| match o.location {
            Location::Inequality(i) => Some(i),
            _ => None,
        })
        .collect::<BTreeSet<_>>()
        .len();
    let anchor = match attempt {
        0 => AnchorRule::Start,
        1 | 2 => AnchorRule::Recentered,
        k => AnchorRule::Perturbed { cycle: k },
    };
    let phase = if attempt < 3 { attempt } else { (attempt - 3) % 3 };
    let mut parts = Vec::new();
    if report.has_discrete_offender() {
        parts.push(Strategy::ContinuousRelaxation);
    }
    if phase == 2 {
        parts.push(Strategy::Lagrangian {
            multipliers: vec![1.0; relaxed_count],
        });
    }
    parts.push(Strategy::Sca { anchor });
    if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        Strategy::Composite { parts }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::Offender;
    use crate::model::{canonicalize, parse_expression, Metadata, RawConstraint, RawRelation, Sense};

    fn problem(obj: &str, cons: &[&str], vars: Vec<Variable>) -> StandardForm {
        let raw = cons
            .iter()
            .map(|c| RawConstraint::new(parse_expression(c, &vars).unwrap(), RawRelation::Le, Expr::Const(0.0)))
            .collect();
        canonicalize(Sense::Minimize, parse_expression(obj, &vars).unwrap(), raw, vars, Metadata::default()).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn e(t: &str) -> Expr {
        crate::model::parse_with(t, &|_| true).unwrap()
    }

    #[test]
    fn taylor_examples() {
        let s = sca_surrogate(&e("x^3"), &names(&["x"]), &[1.0]).unwrap();
        assert_eq!(s, e("1 + 3*(x - 1)"));
        let s = sca_surrogate(&e("x1*x2"), &names(&["x1", "x2"]), &[1.0, 2.0]).unwrap();
        assert_eq!(s, e("2 + 2*(x1 - 1) + 1*(x2 - 2)"));
        let s = sca_surrogate(&e("3*x + 1"), &names(&["x"]), &[7.0]).unwrap();
        assert_eq!(s, e("3*x + 1"));
    }

    #[test]
    fn whole_objective_linearized_when_listed() {
        let p = problem("x^3 - 3*x", &[], vec![Variable::continuous("x", 0.0, 2.0)]);
        let report = ConvexityReport {
            problem_convex: false,
            offenders: vec![Offender {
                location: Location::Objective,
                expr: p.objective.clone(),
                reason: "listed".into(),
            }],
            labels: vec![],
            sampled: false,
        };
        let cp = convexify_at(&p, &report, &Strategy::sca(), &[1.5]).unwrap();
        let at = |x: f64| evaluate(&cp.surrogate.objective, &SliceEnv { names: &names(&["x"]), values: &[x] }).unwrap();
        assert!((at(1.5) + 1.125).abs() < 1e-12);
        assert!((at(2.5) - at(1.5) - 3.75).abs() < 1e-12);
        assert_eq!(cp.surrogate.variables, p.variables);
    }

    #[test]
    fn continuous_relaxation_keeps_bounds() {
        let p = problem("-b", &[], vec![Variable::continuous("b", 0.0, 1.0).with_type(VarType::Binary)]);
        let report = analyze_problem(&p);
        let cp = convexify_at(&p, &report, &Strategy::ContinuousRelaxation, &[0.5]).unwrap();
        let v = &cp.surrogate.variables[0];
        assert_eq!((v.var_type, v.lower, v.upper), (VarType::Continuous, 0.0, 1.0));
        assert_eq!(cp.relaxed_variables, vec!["b".to_string()]);
    }

    #[test]
    fn lagrangian_moves_constraint_then_linearizes() {
        let p = problem("x^2", &["1 - x^2"], vec![Variable::continuous("x", -2.0, 2.0)]);
        let report = analyze_problem(&p);
        assert!(!report.problem_convex);
        let strategy = Strategy::Composite {
            parts: vec![
                Strategy::Lagrangian { multipliers: vec![2.0] },
                Strategy::Sca { anchor: AnchorRule::Start },
            ],
        };
        let cp = convexify_at(&p, &report, &strategy, &[1.0]).unwrap();
        assert_eq!(cp.surrogate.m(), 0);
        assert!(analyze_problem(&cp.surrogate).problem_convex);
        // x^2 kept, 2 kept, -2x^2 replaced by its tangent at 1: -2 - 4(x - 1)
        assert_eq!(cp.surrogate.objective, e("x^2 + 2 + -2 + -4*(x - 1)"));
    }

    #[test]
    fn offending_terms_only() {
        let vars = vec![Variable::continuous("x", 0.0, 3.0), Variable::continuous("y", 0.0, 3.0)];
        let p = problem("x^2 + y^2 - x*y", &["x*y - 2"], vars);
        let report = analyze_problem(&p);
        let cp = convexify_at(&p, &report, &Strategy::sca(), &[1.0, 1.0]).unwrap();
        assert_eq!(cp.surrogate.objective, e("x^2 + y^2 - 1 - (x - 1) - (y - 1)"));
        assert_eq!(cp.mapping[0].change, Change::Linearized { terms: 1 });
    }

    #[test]
    fn discrete_without_relaxation_is_rejected() {
        let p = problem("x", &[], vec![Variable::continuous("x", 0.0, 3.0).with_type(VarType::Integer)]);
        let report = analyze_problem(&p);
        let err = convexify_at(&p, &report, &Strategy::sca(), &[1.0]).unwrap_err();
        assert!(matches!(err, ConvexifyError::StillNonConvex { .. }));
    }

    #[test]
    fn schedule() {
        let p = problem("x*y", &["1 - x*y"], vec![Variable::free("x"), Variable::free("y").with_type(VarType::Integer)]);
        let r = analyze_problem(&p);
        assert_eq!(
            select_strategy(&r, 0),
            Strategy::Composite {
                parts: vec![Strategy::ContinuousRelaxation, Strategy::Sca { anchor: AnchorRule::Start }]
            }
        );
        let mut c = p.clone();
        c.variables[1].var_type = VarType::Continuous;
        let r = analyze_problem(&c);
        assert_eq!(select_strategy(&r, 1), Strategy::Sca { anchor: AnchorRule::Recentered });
        assert_eq!(
            select_strategy(&r, 2),
            Strategy::Composite {
                parts: vec![
                    Strategy::Lagrangian { multipliers: vec![1.0] },
                    Strategy::Sca { anchor: AnchorRule::Recentered }
                ]
            }
        );
        assert_eq!(select_strategy(&r, 3), Strategy::Sca { anchor: AnchorRule::Perturbed { cycle: 3 } });
        assert!(select_strategy(&r, 5).multipliers().is_some());
    }

    #[test]
    fn strategy_json_round_trip() {
        let s = Strategy::Composite {
            parts: vec![
                Strategy::ContinuousRelaxation,
                Strategy::Lagrangian { multipliers: vec![1.0] },
                Strategy::Sca { anchor: AnchorRule::Perturbed { cycle: 4 } },
            ],
        };
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Strategy>(&text).unwrap(), s);
    }

    #[test]
    fn perturbed_anchor_is_deterministic_and_in_box() {
        let vars = vec![Variable::continuous("x", 0.0, 1.0), Variable::free("y")];
        let a = resolve_anchor(&AnchorRule::Perturbed { cycle: 7 }, &vars, &[]);
        assert_eq!(a, resolve_anchor(&AnchorRule::Perturbed { cycle: 7 }, &vars, &[]));
        assert!((0.0..=1.0).contains(&a[0]));
        assert_ne!(a, resolve_anchor(&AnchorRule::Perturbed { cycle: 8 }, &vars, &[]));
    }
}
