use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::expr::{apply_pow, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no value assigned to variable `{0}`")]
    MissingVariable(String),
    #[error("{atom} is undefined at {value}")]
    Domain { atom: &'static str, value: f64 },
    #[error("evaluation overflowed")]
    NonFinite,
}

/// Source of variable values.
pub trait Env {
    fn value(&self, name: &str) -> Option<f64>;
}

impl Env for BTreeMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for HashMap<String, f64> {
    fn value(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

/// Parallel name/value slices; lookup is a linear scan, which beats
/// hashing for the handful of variables a model carries.
#[derive(Debug, Clone, Copy)]
pub struct SliceEnv<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl Env for SliceEnv<'_> {
    fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

impl<F: Fn(&str) -> Option<f64>> Env for F {
    fn value(&self, name: &str) -> Option<f64> {
        self(name)
    }
}

pub fn evaluate(e: &Expr, env: &dyn Env) -> Result<f64, EvalError> {
    let v = eval_node(e, env)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

fn eval_node(e: &Expr, env: &dyn Env) -> Result<f64, EvalError> {
    Ok(match e {
        Expr::Const(c) => *c,
        Expr::Var(v) => env.value(v).ok_or_else(|| EvalError::MissingVariable(v.clone()))?,
        Expr::Unary(atom, arg) => {
            let x = eval_node(arg, env)?;
            atom.apply(x).ok_or(EvalError::Domain { atom: atom.name(), value: x })?
        }
        Expr::Binary(atom, a, b) => {
            let x = eval_node(a, env)?;
            let y = eval_node(b, env)?;
            atom.apply(x, y).ok_or(EvalError::Domain { atom: atom.name(), value: y })?
        }
        Expr::Pow(b, p) => {
            let x = eval_node(b, env)?;
            apply_pow(x, *p).ok_or(EvalError::Domain { atom: "power", value: x })?
        }
        Expr::Sum(ts) => {
            let mut acc = 0.0;
            for t in ts {
                acc += eval_node(t, env)?;
            }
            acc
        }
        Expr::Product(fs) => {
            let mut acc = 1.0;
            for f in fs {
                acc *= eval_node(f, env)?;
            }
            acc
        }
    })
}
