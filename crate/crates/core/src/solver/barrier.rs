//! Projected Newton on a box for the log-barrier augmented Lagrangian
//!
//! `phi(z) = F(z) + sum_j (lambda_j h_j + rho/2 h_j^2) - mu sum_i ln(-G_i(z))`.
//!
//! `phi` is `+inf` wherever a `G_i` is nonnegative or any expression leaves
//! its domain, so line searches never accept such points.

use nalgebra::{DMatrix, DVector};

use super::compiled::Compiled;
use crate::model::EvalError;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const DIVERGENCE: f64 = 1e15;

#[derive(Debug, Clone)]
pub(crate) struct Augmented {
    pub lambda: Vec<f64>,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StageEnd {
    Converged,
    /// No descent possible at working precision.
    Stalled,
    MaxIter,
    Diverged,
    /// The caller's early-exit predicate fired.
    Stopped,
}

pub(crate) struct Core {
    pub names: Vec<String>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub obj: Compiled,
    pub ineq: Vec<Compiled>,
    pub eq: Vec<Compiled>,
}

impl Core {
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &v)| v.max(self.lo[i]).min(self.hi[i]))
            .collect()
    }

    pub fn phi(&self, z: &[f64], mu: f64, al: &Augmented) -> f64 {
        self.try_phi(z, mu, al).unwrap_or(f64::INFINITY)
    }

    fn try_phi(&self, z: &[f64], mu: f64, al: &Augmented) -> Result<f64, EvalError> {
        let mut v = self.obj.value(&self.names, z)?;
        for (j, h) in self.eq.iter().enumerate() {
            let hv = h.value(&self.names, z)?;
            v += al.lambda[j] * hv + 0.5 * al.rho * hv * hv;
        }
        for g in &self.ineq {
            let gv = g.value(&self.names, z)?;
            if gv >= 0.0 {
                return Ok(f64::INFINITY);
            }
            v -= mu * (-gv).ln();
        }
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }

    fn derivatives(&self, z: &[f64], mu: f64, al: &Augmented) -> Result<(DVector<f64>, DMatrix<f64>), EvalError> {
        let n = z.len();
        let mut g = DVector::zeros(n);
        let mut h = DMatrix::zeros(n, n);
        self.obj.add_gradient(&self.names, z, 1.0, &mut g)?;
        self.obj.add_hessian(&self.names, z, 1.0, &mut h)?;
        for (j, c) in self.eq.iter().enumerate() {
            let hv = c.value(&self.names, z)?;
            let w = al.lambda[j] + al.rho * hv;
            let dh = c.gradient(&self.names, z)?;
            g.axpy(w, &dh, 1.0);
            h.ger(al.rho, &dh, &dh, 1.0);
            c.add_hessian(&self.names, z, w, &mut h)?;
        }
        for c in &self.ineq {
            let gv = c.value(&self.names, z)?;
            let dg = c.gradient(&self.names, z)?;
            // d/dz [-mu ln(-g)] = (mu / -g) dg
            let w = mu / -gv;
            g.axpy(w, &dg, 1.0);
            h.ger(w / -gv, &dg, &dg, 1.0);
            c.add_hessian(&self.names, z, w, &mut h)?;
        }
        Ok((g, h))
    }

    /// `||P(z - g) - z||_inf`.
    pub fn projected_residual(&self, z: &[f64], g: &DVector<f64>) -> f64 {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| ((zi - g[i]).max(self.lo[i]).min(self.hi[i]) - zi).abs())
            .fold(0.0, f64::max)
    }

    /// Minimizes `phi` for fixed `mu` and multipliers, in place.
    pub fn minimize(
        &self,
        z: &mut Vec<f64>,
        mu: f64,
        al: &Augmented,
        rel_tol: f64,
        max_iter: usize,
        stop: &dyn Fn(&[f64]) -> bool,
        iterations: &mut usize,
    ) -> StageEnd {
        let n = z.len();
        let mut phi = self.phi(z, mu, al);
        let mut flat = 0;
        for _ in 0..max_iter {
            if stop(z) {
                return StageEnd::Stopped;
            }
            let Ok((g, h)) = self.derivatives(z, mu, al) else {
                return StageEnd::Diverged;
            };
            if g.iter().any(|v| !v.is_finite()) || h.iter().any(|v| !v.is_finite()) {
                return StageEnd::Diverged;
            }
            let scale = self.obj.gradient(&self.names, z).map(|d| d.amax()).unwrap_or(0.0);
            let r = self.projected_residual(z, &g);
            if r <= rel_tol * (1.0 + scale) {
                return StageEnd::Converged;
            }
            *iterations += 1;

            let eps = r.min(1e-8);
            let binding: Vec<bool> = (0..n)
                .map(|i| (z[i] <= self.lo[i] + eps && g[i] > 0.0) || (z[i] >= self.hi[i] - eps && g[i] < 0.0))
                .collect();
            let step = newton_direction(&g, &h, &binding)
                .and_then(|(d, singular)| self.arc_search(z, &g, &d, phi, mu, al, singular))
                .or_else(|| {
                    let sd = -&g / g.amax().max(1.0);
                    self.arc_search(z, &g, &sd, phi, mu, al, true)
                });
            let Some((znew, phinew)) = step else {
                return StageEnd::Stalled;
            };
            if znew.iter().any(|v| v.abs() > DIVERGENCE) || phinew < -DIVERGENCE * DIVERGENCE {
                *z = znew;
                return StageEnd::Diverged;
            }
            let decrease = phi - phinew;
            *z = znew;
            phi = phinew;
            if decrease <= 1e-15 * (1.0 + phi.abs()) {
                flat += 1;
                if flat >= 3 {
                    return StageEnd::Stalled;
                }
            } else {
                flat = 0;
            }
        }
        StageEnd::MaxIter
    }

    /// Backtracking along `P(z + a d)` with an Armijo test on the arc.
    /// With `expand`, an accepted unit step is doubled while `phi` keeps
    /// falling, so unbounded directions are detected quickly.
    #[allow(clippy::too_many_arguments)]
    fn arc_search(
        &self,
        z: &[f64],
        g: &DVector<f64>,
        d: &DVector<f64>,
        phi: f64,
        mu: f64,
        al: &Augmented,
        expand: bool,
    ) -> Option<(Vec<f64>, f64)> {
        let at = |a: f64| -> (Vec<f64>, f64) {
            let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(zi, di)| zi + a * di).collect();
            let trial = self.project(&trial);
            let predicted = trial.iter().zip(z).zip(g.iter()).map(|((t, zi), gi)| gi * (t - zi)).sum();
            (trial, predicted)
        };
        let mut a = 1.0;
        for _ in 0..MAX_HALVINGS {
            let (trial, predicted) = at(a);
            if predicted < 0.0 {
                let v = self.phi(&trial, mu, al);
                if v.is_finite() && v <= phi + ARMIJO * predicted {
                    let mut best = (trial, v);
                    let mut scale = 1.0;
                    while expand && a == 1.0 && best.0.iter().all(|x| x.abs() <= DIVERGENCE) {
                        scale *= 2.0;
                        let (t, _) = at(scale);
                        let w = self.phi(&t, mu, al);
                        if !(w.is_finite() && w < best.1) || t == best.0 {
                            break;
                        }
                        best = (t, w);
                    }
                    return Some(best);
                }
            } else if trial.as_slice() == z {
                return None;
            }
            a *= 0.5;
        }
        None
    }
}

/// Newton step on free coordinates, diagonally scaled gradient step on
/// binding ones, flagged when the free block needed regularization.
/// `None` when the free block cannot be factored.
fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>, binding: &[bool]) -> Option<(DVector<f64>, bool)> {
    let n = g.len();
    let free: Vec<usize> = (0..n).filter(|&i| !binding[i]).collect();
    let mut d = DVector::zeros(n);
    for i in (0..n).filter(|&i| binding[i]) {
        let hii = h[(i, i)];
        d[i] = -g[i] / if hii > 0.0 { hii } else { 1.0 };
    }
    if free.is_empty() {
        return Some((d, false));
    }
    let k = free.len();
    let hf = DMatrix::from_fn(k, k, |a, b| h[(free[a], free[b])]);
    let gf = DVector::from_fn(k, |a, _| g[free[a]]);
    let diag = hf.diagonal().amax().max(1e-300);
    let mut delta = 0.0;
    for _ in 0..12 {
        let mut m = hf.clone();
        for a in 0..k {
            m[(a, a)] += delta;
        }
        if let Some(ch) = m.cholesky() {
            let df = ch.solve(&(-&gf));
            if df.iter().all(|v| v.is_finite()) {
                for (a, &i) in free.iter().enumerate() {
                    d[i] = df[a];
                }
                return Some((d, delta > 0.0));
            }
        }
        delta = if delta == 0.0 { 1e-12 * (1.0 + diag) } else { delta * 100.0 };
    }
    None
}
