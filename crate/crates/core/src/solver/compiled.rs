//! Expressions with precomputed symbolic first and second derivatives.

use nalgebra::{DMatrix, DVector};

use crate::model::{differentiate, evaluate, EvalError, Expr, SliceEnv};

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub expr: Expr,
    /// Indices of the variables the expression depends on.
    vars: Vec<usize>,
    /// `d/dx_vars[k]`.
    grad: Vec<Expr>,
    /// Row-major upper triangle over `vars`.
    hess: Vec<Expr>,
}

impl Compiled {
    pub fn new(expr: &Expr, names: &[String]) -> Compiled {
        let vars: Vec<usize> = (0..names.len()).filter(|&i| expr.depends_on(&names[i])).collect();
        let grad: Vec<Expr> = vars.iter().map(|&i| differentiate(expr, &names[i])).collect();
        let mut hess = Vec::with_capacity(vars.len() * (vars.len() + 1) / 2);
        for (a, g) in grad.iter().enumerate() {
            for &j in &vars[a..] {
                hess.push(differentiate(g, &names[j]));
            }
        }
        Compiled {
            expr: expr.clone(),
            vars,
            grad,
            hess,
        }
    }

    pub fn value(&self, names: &[String], x: &[f64]) -> Result<f64, EvalError> {
        evaluate(&self.expr, &SliceEnv { names, values: x })
    }

    /// Adds `w * grad` into `g`.
    pub fn add_gradient(&self, names: &[String], x: &[f64], w: f64, g: &mut DVector<f64>) -> Result<(), EvalError> {
        let env = SliceEnv { names, values: x };
        for (k, &i) in self.vars.iter().enumerate() {
            g[i] += w * evaluate(&self.grad[k], &env)?;
        }
        Ok(())
    }

    pub fn gradient(&self, names: &[String], x: &[f64]) -> Result<DVector<f64>, EvalError> {
        let mut g = DVector::zeros(names.len());
        self.add_gradient(names, x, 1.0, &mut g)?;
        Ok(g)
    }

    /// Adds `w * hessian` into `h`.
    pub fn add_hessian(&self, names: &[String], x: &[f64], w: f64, h: &mut DMatrix<f64>) -> Result<(), EvalError> {
        if w == 0.0 {
            return Ok(());
        }
        let env = SliceEnv { names, values: x };
        let mut k = 0;
        for (a, &i) in self.vars.iter().enumerate() {
            for &j in &self.vars[a..] {
                let v = w * evaluate(&self.hess[k], &env)?;
                k += 1;
                h[(i, j)] += v;
                if i != j {
                    h[(j, i)] += v;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_with;

    #[test]
    fn derivatives_of_bilinear_form() {
        let names = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let c = Compiled::new(&parse_with("x*y + z^2", &|_| true).unwrap(), &names);
        let x = [2.0, 3.0, 4.0];
        assert_eq!(c.value(&names, &x).unwrap(), 22.0);
        assert_eq!(c.gradient(&names, &x).unwrap().as_slice(), &[3.0, 2.0, 8.0]);
        let mut h = DMatrix::zeros(3, 3);
        c.add_hessian(&names, &x, 1.0, &mut h).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0]));
    }
}
