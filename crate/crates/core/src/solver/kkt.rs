//! KKT residuals at a candidate point, with multiplier recovery.
//!
//! Barrier multipliers `mu / -g` lose all digits once `g` is of order
//! `mu`, so the estimate is also recomputed by least squares on the
//! near-active set and the better of the two is kept.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::{differentiate, evaluate, Expr, SliceEnv, StandardForm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    #[serde(with = "nullable")]
    pub stationarity: f64,
    #[serde(with = "nullable")]
    pub primal: f64,
    #[serde(with = "nullable")]
    pub complementarity: f64,
}

impl Kkt {
    pub fn failed() -> Kkt {
        Kkt {
            stationarity: f64::NAN,
            primal: f64::NAN,
            complementarity: f64::NAN,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.stationarity.is_finite() && self.primal.is_finite() && self.complementarity.is_finite()
    }

    pub fn within(&self, tol: f64) -> bool {
        self.stationarity <= tol && self.primal <= tol && self.complementarity <= tol
    }

    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Non-finite floats travel as JSON `null`.
pub(crate) mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn grad_at(e: &Expr, names: &[String], x: &[f64]) -> Option<Vec<f64>> {
    let env = SliceEnv { names, values: x };
    names
        .iter()
        .map(|n| {
            if e.depends_on(n) {
                evaluate(&differentiate(e, n), &env).ok()
            } else {
                Some(0.0)
            }
        })
        .collect()
}

/// Residuals of `p` at `x` for given multipliers. Bounds enter through
/// projection, so bound multipliers are implicit.
pub fn kkt_residuals(p: &StandardForm, x: &[f64], lambda: &[f64], nu: &[f64]) -> Kkt {
    let names = p.names();
    let env = SliceEnv { names: &names, values: x };
    let Some(gf) = grad_at(&p.objective, &names, x) else {
        return Kkt::failed();
    };
    let mut gl = gf.clone();
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for (c, &l) in p.inequalities.iter().zip(lambda) {
        let (Ok(g), Some(dg)) = (evaluate(&c.lhs, &env), grad_at(&c.lhs, &names, x)) else {
            return Kkt::failed();
        };
        primal = primal.max(g);
        comp = comp.max((l * g).abs());
        for (a, b) in gl.iter_mut().zip(&dg) {
            *a += l * b;
        }
    }
    for (c, &v) in p.equalities.iter().zip(nu) {
        let (Ok(h), Some(dh)) = (evaluate(&c.lhs, &env), grad_at(&c.lhs, &names, x)) else {
            return Kkt::failed();
        };
        primal = primal.max(h.abs());
        for (a, b) in gl.iter_mut().zip(&dh) {
            *a += v * b;
        }
    }
    let mut stat = 0.0f64;
    for (i, v) in p.variables.iter().enumerate() {
        primal = primal.max(v.lower - x[i]).max(x[i] - v.upper);
        let r = (x[i] - gl[i]).max(v.lower).min(v.upper) - x[i];
        stat = stat.max(r.abs());
    }
    let scale = 1.0 + gf.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Kkt {
        stationarity: stat / scale,
        primal: primal.max(0.0),
        complementarity: comp,
    }
}

pub(crate) struct Estimate {
    pub inequality: Vec<f64>,
    pub equality: Vec<f64>,
}

/// Multipliers for every inequality of `p` (folded ones included) and
/// every equality.
///
/// `barrier` holds `mu / -g` for barrier-handled inequalities and `None`
/// for folded ones; `nu` are the augmented Lagrangian estimates.
pub(crate) fn estimate(p: &StandardForm, x: &[f64], mu: f64, barrier: &[Option<f64>], nu: &[f64]) -> Estimate {
    let plain = Estimate {
        inequality: barrier.iter().map(|l| l.unwrap_or(0.0)).collect(),
        equality: nu.to_vec(),
    };
    let Some(refined) = least_squares(p, x, mu) else {
        return plain;
    };
    let a = kkt_residuals(p, x, &plain.inequality, &plain.equality);
    let b = kkt_residuals(p, x, &refined.inequality, &refined.equality);
    if b.is_finite() && (!a.is_finite() || b.max() < a.max()) {
        refined
    } else {
        plain
    }
}

fn least_squares(p: &StandardForm, x: &[f64], mu: f64) -> Option<Estimate> {
    let names = p.names();
    let env = SliceEnv { names: &names, values: x };
    let gf = grad_at(&p.objective, &names, x)?;
    let near = mu.sqrt().max(1e-7);
    let mut active: Vec<usize> = Vec::new();
    let mut dg: Vec<Vec<f64>> = Vec::new();
    for (i, c) in p.inequalities.iter().enumerate() {
        let g = evaluate(&c.lhs, &env).ok()?;
        if -g <= near * (1.0 + g.abs()) {
            active.push(i);
            dg.push(grad_at(&c.lhs, &names, x)?);
        }
    }
    let dh: Vec<Vec<f64>> = p
        .equalities
        .iter()
        .map(|c| grad_at(&c.lhs, &names, x))
        .collect::<Option<_>>()?;
    // Coordinates strictly inside their bounds.
    let free: Vec<usize> = p
        .variables
        .iter()
        .enumerate()
        .filter(|(i, v)| {
            let tol = 1e-9 * (1.0 + x[*i].abs());
            x[*i] > v.lower + tol && x[*i] < v.upper - tol
        })
        .map(|(i, _)| i)
        .collect();

    let mut keep: Vec<bool> = vec![true; active.len()];
    loop {
        let cols: Vec<&Vec<f64>> = dh.iter().chain(dg.iter().zip(&keep).filter(|(_, k)| **k).map(|(d, _)| d)).collect();
        let mut lam = vec![0.0; p.inequalities.len()];
        let mut nu = vec![0.0; p.equalities.len()];
        if !cols.is_empty() && !free.is_empty() {
            let a = DMatrix::from_fn(free.len(), cols.len(), |r, c| cols[c][free[r]]);
            let b = DVector::from_fn(free.len(), |r, _| -gf[free[r]]);
            let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
            nu.copy_from_slice(&sol.as_slice()[..dh.len()]);
            let mut k = dh.len();
            for (j, &i) in active.iter().enumerate() {
                if keep[j] {
                    lam[i] = sol[k];
                    k += 1;
                }
            }
        }
        let worst = active
            .iter()
            .enumerate()
            .filter(|(j, &i)| keep[*j] && lam[i] < 0.0)
            .min_by(|a, b| lam[*a.1].total_cmp(&lam[*b.1]))
            .map(|(j, _)| j);
        match worst {
            Some(j) => keep[j] = false,
            None => {
                return Some(Estimate {
                    inequality: lam,
                    equality: nu,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_expression, Constraint, Variable};

    fn problem(obj: &str, le: &[&str], vars: Vec<Variable>) -> StandardForm {
        StandardForm {
            objective: parse_expression(obj, &vars).unwrap(),
            inequalities: le.iter().map(|c| Constraint::le(parse_expression(c, &vars).unwrap())).collect(),
            equalities: vec![],
            variables: vars,
            metadata: Default::default(),
        }
    }

    #[test]
    fn residuals_at_known_optimum() {
        let p = problem("x^2", &["1 - x"], vec![Variable::free("x")]);
        let k = kkt_residuals(&p, &[1.0], &[2.0], &[]);
        assert_eq!(k, Kkt { stationarity: 0.0, primal: 0.0, complementarity: 0.0 });
        let k = kkt_residuals(&p, &[0.5], &[0.0], &[]);
        assert_eq!(k.primal, 0.5);
        assert!(k.stationarity > 0.0);
    }

    #[test]
    fn bound_multipliers_are_implicit() {
        let p = problem("-x", &[], vec![Variable::continuous("x", 0.0, 3.0)]);
        assert_eq!(kkt_residuals(&p, &[3.0], &[], &[]).stationarity, 0.0);
        assert!(kkt_residuals(&p, &[2.0], &[], &[]).stationarity > 0.0);
    }

    #[test]
    fn least_squares_recovers_active_multiplier() {
        let p = problem("x^2", &["1 - x", "x - 5"], vec![Variable::free("x")]);
        let e = estimate(&p, &[1.0], 1e-9, &[None, None], &[]);
        assert!((e.inequality[0] - 2.0).abs() < 1e-12);
        assert_eq!(e.inequality[1], 0.0);
    }

    #[test]
    fn negative_multipliers_are_dropped() {
        // Both constraints active at x = 1, only the first supports the optimum.
        let p = problem("x^2", &["1 - x", "x - 1"], vec![Variable::free("x")]);
        let e = estimate(&p, &[1.0], 1e-9, &[None, None], &[]);
        assert!(e.inequality.iter().all(|l| *l >= 0.0));
        let k = kkt_residuals(&p, &[1.0], &e.inequality, &[]);
        assert!(k.stationarity < 1e-12);
    }

    #[test]
    fn null_round_trip() {
        let s = serde_json::to_string(&Kkt::failed()).unwrap();
        assert_eq!(s, r#"{"stationarity":null,"primal":null,"complementarity":null}"#);
        let k: Kkt = serde_json::from_str(&s).unwrap();
        assert!(k.stationarity.is_nan());
    }
}
