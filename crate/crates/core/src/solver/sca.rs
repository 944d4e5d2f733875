//! The outer loop: convexify at the anchor, solve, move the anchor.

use serde::{Deserialize, Serialize};

use super::{kkt_residuals, objective_at, solve_convex, violation_at, Solution, SolveError, SolverOptions, Status};
use crate::convexify::{convexify, convexify_at, Change, ConvexifiedProblem, Strategy};
use crate::curvature::{ConvexityReport, Location};
use crate::model::StandardForm;

/// Anchor movement below which the iterates count as settled.
const STEP_THRESHOLD: f64 = 1e-4;
const MAX_INCREASES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaIteration {
    pub anchor: Vec<f64>,
    pub x_star: Vec<f64>,
    pub status: Status,
    /// Surrogate objective at its own minimizer.
    #[serde(with = "super::kkt::nullable")]
    pub surrogate_objective: f64,
    /// Original objective at the next anchor.
    #[serde(with = "super::kkt::nullable")]
    pub original_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaTrace {
    pub iterations: Vec<ScaIteration>,
    pub solution: Solution,
}

pub fn sca_loop(
    original: &StandardForm,
    report: &ConvexityReport,
    strategy: &Strategy,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<Solution, SolveError> {
    sca_loop_traced(original, report, strategy, x0, opts).map(|t| t.solution)
}

pub fn sca_loop_traced(
    original: &StandardForm,
    report: &ConvexityReport,
    strategy: &Strategy,
    x0: &[f64],
    opts: &SolverOptions,
) -> Result<ScaTrace, SolveError> {
    opts.validate()?;
    if x0.len() != original.variables.len() {
        return Err(SolveError::Dimension {
            got: x0.len(),
            want: original.variables.len(),
        });
    }
    let mut cp = convexify(original, report, strategy, x0)?;
    let anchored = cp.mapping.iter().any(|m| matches!(m.change, Change::Linearized { .. }));
    let mut anchor = cp.anchor.clone();
    let mut f_prev = objective_at(original, &anchor).unwrap_or(f64::NAN);
    let mut viol_prev = violation_at(original, &anchor);
    let mut trace = Vec::new();
    let mut increases = 0;
    let mut total = 0;
    for outer in 0..opts.max_outer {
        if outer > 0 {
            cp = convexify_at(original, report, strategy, &anchor)?;
        }
        let s = solve_convex(&cp.surrogate, &anchor, opts)?;
        total += s.iterations;
        if !s.status.has_solution() {
            trace.push(ScaIteration {
                anchor: anchor.clone(),
                x_star: s.x_star.clone(),
                status: s.status,
                surrogate_objective: s.objective,
                original_objective: f64::NAN,
            });
            let solution = finish(original, &cp, s, total, None, opts.tolerance);
            return Ok(ScaTrace { iterations: trace, solution });
        }
        let next: Vec<f64> = anchor
            .iter()
            .zip(&s.x_star)
            .map(|(a, x)| a + opts.damping * (x - a))
            .collect();
        let f_next = objective_at(original, &next).unwrap_or(f64::NAN);
        trace.push(ScaIteration {
            anchor: anchor.clone(),
            x_star: s.x_star.clone(),
            status: s.status,
            surrogate_objective: s.objective,
            original_objective: f_next,
        });
        let step = anchor.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let change = (f_next - f_prev).abs();
        // Approaching from outside the feasible set may raise the objective;
        // only an increase that buys no feasibility counts.
        let viol_next = violation_at(original, &next);
        if f_next > f_prev + 1e-12 * (1.0 + f_prev.abs()) && viol_next >= viol_prev {
            increases += 1;
        } else {
            increases = 0;
        }
        anchor = next;
        let settled = !anchored || (change <= opts.sca_threshold && step <= STEP_THRESHOLD);
        if settled {
            let solution = finish(original, &cp, s, total, None, opts.tolerance);
            return Ok(ScaTrace { iterations: trace, solution });
        }
        if increases >= MAX_INCREASES {
            let solution = finish(original, &cp, s, total, Some(Status::NumericalFailure), opts.tolerance);
            return Ok(ScaTrace { iterations: trace, solution });
        }
        f_prev = f_next;
        viol_prev = viol_next;
        if outer + 1 == opts.max_outer {
            let solution = finish(original, &cp, s, total, Some(Status::MaxIter), opts.tolerance);
            return Ok(ScaTrace { iterations: trace, solution });
        }
    }
    unreachable!("max_outer is validated positive")
}

/// Re-expresses the last inner solution against the original problem.
/// `optimal` survives only if the original problem's KKT residuals at the
/// point are within tolerance; otherwise the point is reported as max-iter.
fn finish(
    original: &StandardForm,
    cp: &ConvexifiedProblem,
    s: Solution,
    total: usize,
    forced: Option<Status>,
    tolerance: f64,
) -> Solution {
    let status = forced.unwrap_or(s.status);
    let mut lam = vec![0.0; original.m()];
    let mut nu = vec![0.0; original.n()];
    for m in &cp.mapping {
        let value = match (&m.surrogate, &m.change) {
            (_, Change::Relaxed { multiplier }) => *multiplier,
            (Some(Location::Inequality(j)), _) => s.inequality_multipliers.get(*j).copied().unwrap_or(0.0),
            (Some(Location::Equality(j)), _) => s.equality_multipliers.get(*j).copied().unwrap_or(0.0),
            _ => continue,
        };
        match m.original {
            Location::Inequality(i) if i < lam.len() => lam[i] = value,
            Location::Equality(i) if i < nu.len() => nu[i] = value,
            _ => {}
        }
    }
    let (objective, kkt) = if status.has_solution() {
        (
            objective_at(original, &s.x_star).unwrap_or(f64::NAN),
            kkt_residuals(original, &s.x_star, &lam, &nu),
        )
    } else {
        (f64::NAN, s.kkt)
    };
    let status = match status {
        Status::Optimal if !kkt.within(tolerance) => Status::MaxIter,
        other => other,
    };
    Solution {
        objective,
        status,
        kkt,
        iterations: total,
        inequality_multipliers: lam,
        equality_multipliers: nu,
        ..s
    }
}
