//! Convex subproblem solver and the SCA outer loop.
//!
//! Bounds and single-variable affine inequalities form a box handled by
//! projection. Other inequalities go through a log barrier, equalities
//! through an augmented Lagrangian. A phase-I problem in `(x, s)` finds a
//! strictly feasible start when the projected start point is not one.

mod barrier;
mod compiled;
mod kkt;
mod sca;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convexify::{box_center, ConvexifyError};
use crate::curvature::{analyze_problem, curvature_of, Bounds, Location};
use crate::model::{evaluate, Expr, SliceEnv, StandardForm};
use barrier::{Augmented, Core, StageEnd};
use compiled::Compiled;

pub use kkt::{kkt_residuals, Kkt};
pub(crate) use kkt::nullable;
pub use sca::{sca_loop, sca_loop_traced, ScaIteration, ScaTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    MaxIter,
    InfeasibleSubproblem,
    NumericalFailure,
}

impl Status {
    /// A point worth validating was produced.
    pub fn has_solution(self) -> bool {
        matches!(self, Status::Optimal | Status::MaxIter)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::MaxIter => "max-iter",
            Status::InfeasibleSubproblem => "infeasible-subproblem",
            Status::NumericalFailure => "numerical-failure",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// Ordered as the problem's variables.
    pub x_star: Vec<f64>,
    #[serde(with = "kkt::nullable")]
    pub objective: f64,
    pub status: Status,
    pub kkt: Kkt,
    pub iterations: usize,
    /// One per inequality of the solved problem.
    pub inequality_multipliers: Vec<f64>,
    pub equality_multipliers: Vec<f64>,
}

impl Solution {
    pub fn point(&self, p: &StandardForm) -> BTreeMap<String, f64> {
        p.variables.iter().map(|v| v.name.clone()).zip(self.x_star.iter().copied()).collect()
    }

    fn failed(status: Status, x: Vec<f64>, iterations: usize, m: usize, n: usize) -> Solution {
        Solution {
            x_star: x,
            objective: f64::NAN,
            status,
            kkt: Kkt::failed(),
            iterations,
            inequality_multipliers: vec![0.0; m],
            equality_multipliers: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Threshold on the change of the original objective between SCA
    /// iterates.
    pub sca_threshold: f64,
    /// `x_{m+1} = x_m + damping (x* - x_m)`.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_inner: 500,
            max_outer: 30,
            sca_threshold: 1e-6,
            damping: 1.0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolveError> {
        let ok = self.tolerance > 0.0
            && self.max_inner > 0
            && self.max_outer > 0
            && self.sca_threshold > 0.0
            && self.damping > 0.0
            && self.damping <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(SolveError::InvalidOptions(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("problem is not convex at {location}: {reason}")]
    NotConvex { location: Location, reason: String },
    #[error("start point has {got} coordinates, problem has {want} variables")]
    Dimension { got: usize, want: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Convexify(#[from] ConvexifyError),
}

/// `a * x_k + b <= 0` for a single variable `x_k`.
fn single_variable_affine(e: &Expr, names: &[String]) -> Option<(usize, f64, f64)> {
    let vars = e.variables();
    if vars.len() != 1 {
        return None;
    }
    let a = curvature_of(e, &Bounds::default());
    if !a.curvature.is_affine() || a.sampled {
        return None;
    }
    let name = vars.into_iter().next()?;
    let k = names.iter().position(|n| *n == name)?;
    let at = |v: f64| evaluate(e, &|n: &str| (n == name).then_some(v)).ok();
    let b = at(0.0)?;
    let slope = at(1.0)? - b;
    (slope != 0.0 && slope.is_finite()).then_some((k, slope, b))
}

/// Variable bounds intersected with every single-variable affine
/// inequality. `rest` lists the inequalities that were not folded in.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpliedBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub rest: Vec<usize>,
}

pub fn implied_box(p: &StandardForm) -> ImpliedBox {
    let names = p.names();
    let mut lo: Vec<f64> = p.variables.iter().map(|v| v.lower).collect();
    let mut hi: Vec<f64> = p.variables.iter().map(|v| v.upper).collect();
    let mut rest = Vec::new();
    for (i, c) in p.inequalities.iter().enumerate() {
        match single_variable_affine(&c.lhs, &names) {
            Some((k, a, b)) if a > 0.0 => hi[k] = hi[k].min(-b / a),
            Some((k, a, b)) => lo[k] = lo[k].max(-b / a),
            None => rest.push(i),
        }
    }
    ImpliedBox { lo, hi, rest }
}

const MU0: f64 = 1.0;
const MU_FACTOR: f64 = 0.1;
const RHO0: f64 = 10.0;
const RHO_STEPS: usize = 5;
const MAX_AL_ROUNDS: usize = 40;
const STAGE_TOL: f64 = 1e-6;
const PHASE_ONE: &str = "#s";

/// Solves a convex problem from `x0` (projected onto the box first).
pub fn solve_convex(p: &StandardForm, x0: &[f64], opts: &SolverOptions) -> Result<Solution, SolveError> {
    opts.validate()?;
    let report = analyze_problem(p);
    if let Some(o) = report.offenders.first() {
        return Err(SolveError::NotConvex {
            location: o.location.clone(),
            reason: o.reason.clone(),
        });
    }
    if x0.len() != p.variables.len() {
        return Err(SolveError::Dimension {
            got: x0.len(),
            want: p.variables.len(),
        });
    }
    let names = p.names();
    let (m, n) = (p.m(), p.n());
    let ImpliedBox { lo, hi, rest: barrier_index } = implied_box(p);
    let start: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(i, &v)| if v.is_finite() { v } else { box_center(&p.variables[i]) })
        .collect();
    if lo.iter().zip(&hi).any(|(l, h)| l > h) {
        return Ok(Solution::failed(Status::InfeasibleSubproblem, start, 0, m, n));
    }
    let core = Core {
        names: names.clone(),
        lo,
        hi,
        obj: Compiled::new(&p.objective, &names),
        ineq: barrier_index.iter().map(|&i| Compiled::new(&p.inequalities[i].lhs, &names)).collect(),
        eq: p.equalities.iter().map(|c| Compiled::new(&c.lhs, &names)).collect(),
    };
    let mut z = core.project(&start);
    let mut iterations = 0;

    let no_al = Augmented { lambda: vec![0.0; n], rho: 0.0 };
    if !core.ineq.is_empty() && !core.phi(&z, MU0, &no_al).is_finite() {
        match phase_one(&core, &z, opts, &mut iterations) {
            Some(interior) => z = interior,
            None => return Ok(Solution::failed(Status::InfeasibleSubproblem, z, iterations, m, n)),
        }
    }
    if !core.phi(&z, MU0, &no_al).is_finite() {
        match domain_start(&core, &z) {
            Some(s) => z = s,
            None => return Ok(Solution::failed(Status::NumericalFailure, z, iterations, m, n)),
        }
    }

    let mu_final = if core.ineq.is_empty() { 0.0 } else { opts.tolerance * MU_FACTOR };
    let mut al = Augmented {
        lambda: vec![0.0; n],
        rho: if n == 0 { 0.0 } else { RHO0 },
    };
    let never = |_: &[f64]| false;
    let mut last = StageEnd::Converged;
    let mut hit_cap = false;
    for round in 0..MAX_AL_ROUNDS {
        let mut mu = if round == 0 && mu_final > 0.0 { MU0 } else { mu_final };
        loop {
            let tol = if mu <= mu_final { opts.tolerance * 1e-2 } else { STAGE_TOL };
            last = core.minimize(&mut z, mu, &al, tol, opts.max_inner, &never, &mut iterations);
            hit_cap |= last == StageEnd::MaxIter;
            if last == StageEnd::Diverged || mu <= mu_final {
                break;
            }
            mu = (mu * MU_FACTOR).max(mu_final);
        }
        if last == StageEnd::Diverged || n == 0 {
            break;
        }
        let h: Vec<f64> = core.eq.iter().map(|c| c.value(&names, &z).unwrap_or(f64::NAN)).collect();
        if h.iter().any(|v| !v.is_finite()) {
            last = StageEnd::Diverged;
            break;
        }
        let hmax = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (l, hv) in al.lambda.iter_mut().zip(&h) {
            *l += al.rho * hv;
        }
        if hmax <= opts.tolerance * 1e-2 {
            break;
        }
        if round + 1 < RHO_STEPS {
            al.rho *= 10.0;
        }
    }
    if last == StageEnd::Diverged {
        return Ok(Solution::failed(Status::NumericalFailure, z, iterations, m, n));
    }

    let mut barrier = vec![None; m];
    for (k, &i) in barrier_index.iter().enumerate() {
        barrier[i] = core.ineq[k].value(&names, &z).ok().map(|g| mu_final / -g);
    }
    let est = kkt::estimate(p, &z, mu_final, &barrier, &al.lambda);
    let lam = est.inequality;
    let kkt = kkt_residuals(p, &z, &lam, &est.equality);
    let objective = core.obj.value(&names, &z).unwrap_or(f64::NAN);
    let status = if !objective.is_finite() || !kkt.is_finite() {
        Status::NumericalFailure
    } else if kkt.within(opts.tolerance) {
        Status::Optimal
    } else if hit_cap || last == StageEnd::Stalled || last == StageEnd::Converged {
        Status::MaxIter
    } else {
        Status::NumericalFailure
    };
    Ok(Solution {
        x_star: z,
        objective,
        status,
        kkt,
        iterations,
        inequality_multipliers: lam,
        equality_multipliers: est.equality,
    })
}

/// Minimizes `s` subject to `G_i(x) - s <= 0`; returns `x` once `s < 0`.
fn phase_one(core: &Core, z: &[f64], opts: &SolverOptions, iterations: &mut usize) -> Option<Vec<f64>> {
    let mut names = core.names.clone();
    names.push(PHASE_ONE.to_string());
    let s = Expr::var(PHASE_ONE);
    let start = evaluable_start(core, z)?;
    let gmax = core
        .ineq
        .iter()
        .map(|g| g.value(&core.names, &start).ok())
        .collect::<Option<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut lo = core.lo.clone();
    let mut hi = core.hi.clone();
    lo.push(-1.0);
    hi.push(f64::INFINITY);
    let aug = Core {
        names: names.clone(),
        lo,
        hi,
        obj: Compiled::new(&s, &names),
        ineq: core
            .ineq
            .iter()
            .map(|g| Compiled::new(&Expr::sub(g.expr.clone(), s.clone()), &names))
            .collect(),
        eq: Vec::new(),
    };
    let mut w = start.clone();
    w.push(gmax.max(-0.5) + 1.0);
    let al = Augmented { lambda: Vec::new(), rho: 0.0 };
    let target = -1e-6f64;
    let done = |w: &[f64]| w[w.len() - 1] < target;
    let mut mu = MU0;
    loop {
        let end = aug.minimize(&mut w, mu, &al, STAGE_TOL, opts.max_inner, &done, iterations);
        if end == StageEnd::Stopped || end == StageEnd::Diverged || mu <= opts.tolerance * MU_FACTOR {
            break;
        }
        mu *= MU_FACTOR;
    }
    let x = w[..w.len() - 1].to_vec();
    let strictly = core.ineq.iter().all(|g| matches!(g.value(&core.names, &x), Ok(v) if v < 0.0));
    strictly.then_some(x)
}

/// A box point where every expression evaluates, searched along the
/// segment toward the box center.
fn evaluable_start(core: &Core, z: &[f64]) -> Option<Vec<f64>> {
    let center: Vec<f64> = (0..z.len())
        .map(|i| {
            let (l, h) = (core.lo[i], core.hi[i]);
            match (l.is_finite(), h.is_finite()) {
                (true, true) => 0.5 * (l + h),
                (true, false) => l + 1.0,
                (false, true) => h - 1.0,
                _ => 0.0,
            }
        })
        .collect();
    let ok = |x: &[f64]| {
        core.obj.value(&core.names, x).is_ok() && core.ineq.iter().chain(&core.eq).all(|c| c.value(&core.names, x).is_ok())
    };
    for t in [0.0, 1e-6, 1e-3, 0.1, 0.5, 1.0] {
        let x: Vec<f64> = z.iter().zip(&center).map(|(a, c)| a + t * (c - a)).collect();
        let x = core.project(&x);
        if ok(&x) {
            return Some(x);
        }
    }
    None
}

fn domain_start(core: &Core, z: &[f64]) -> Option<Vec<f64>> {
    let al = Augmented { lambda: vec![0.0; core.eq.len()], rho: 0.0 };
    let x = evaluable_start(core, z)?;
    core.phi(&x, MU0, &al).is_finite().then_some(x)
}

/// Objective of `p` at a point, for callers holding names and values.
pub fn objective_at(p: &StandardForm, x: &[f64]) -> Option<f64> {
    let names = p.names();
    evaluate(&p.objective, &SliceEnv { names: &names, values: x }).ok()
}

/// Largest violation of the explicit constraints of `p` at a point;
/// infinite where a constraint cannot be evaluated.
pub fn violation_at(p: &StandardForm, x: &[f64]) -> f64 {
    let names = p.names();
    let env = SliceEnv { names: &names, values: x };
    let value = |e| evaluate(e, &env).ok().filter(|v: &f64| v.is_finite());
    let ineq = p.inequalities.iter().map(|c| value(&c.lhs).map_or(f64::INFINITY, |v| v.max(0.0)));
    let eq = p.equalities.iter().map(|c| value(&c.lhs).map_or(f64::INFINITY, f64::abs));
    ineq.chain(eq).fold(0.0, f64::max)
}
