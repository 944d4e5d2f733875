//! Helpers shared by the integration suites. The evaluator here walks
//! expression trees on its own so that oracles do not reuse the engine's
//! evaluation code.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use optira::bench::{load_corpus, CorpusProblem};
use optira::llm::{MockBackend, MockScript};
use optira::model::{BinaryAtom, Expr, ModelDocument, StandardForm, UnaryAtom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const NAMES: [&str; 3] = ["x", "y", "z"];

pub fn names() -> Vec<String> {
    NAMES.iter().map(|s| s.to_string()).collect()
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn corpus(name: &str) -> Vec<CorpusProblem> {
    load_corpus(&data_dir().join(format!("{name}.json"))).expect("fixture corpus loads")
}

pub fn mock(name: &str) -> MockBackend {
    MockBackend::new(MockScript::load(&data_dir().join(format!("{name}.mock.toml"))).expect("fixture mock loads"))
}

pub fn model_fixture(name: &str) -> StandardForm {
    let text = std::fs::read_to_string(data_dir().join("models").join(format!("{name}.json"))).unwrap();
    ModelDocument::from_json(&text).unwrap().to_standard().unwrap()
}

/// Independent evaluation; `None` outside the domain or on overflow.
pub fn eval(e: &Expr, names: &[String], x: &[f64]) -> Option<f64> {
    let v = match e {
        Expr::Const(c) => *c,
        Expr::Var(n) => x[names.iter().position(|m| m == n)?],
        Expr::Sum(ts) => ts.iter().map(|t| eval(t, names, x)).sum::<Option<f64>>()?,
        Expr::Product(fs) => fs.iter().map(|f| eval(f, names, x)).product::<Option<f64>>()?,
        Expr::Pow(b, p) => {
            let b = eval(b, names, x)?;
            if (p.fract() != 0.0 && b < 0.0) || (*p < 0.0 && b == 0.0) {
                return None;
            }
            b.powf(*p)
        }
        Expr::Unary(a, arg) => {
            let t = eval(arg, names, x)?;
            match a {
                UnaryAtom::Exp => t.exp(),
                UnaryAtom::Log if t > 0.0 => t.ln(),
                UnaryAtom::Sqrt if t >= 0.0 => t.sqrt(),
                UnaryAtom::Abs => t.abs(),
                UnaryAtom::Square => t * t,
                UnaryAtom::InvPos if t > 0.0 => t.recip(),
                UnaryAtom::Sign => {
                    if t == 0.0 {
                        0.0
                    } else {
                        t.signum()
                    }
                }
                _ => return None,
            }
        }
        Expr::Binary(a, l, r) => {
            let (l, r) = (eval(l, names, x)?, eval(r, names, x)?);
            match a {
                BinaryAtom::Div if r != 0.0 => l / r,
                BinaryAtom::Div => return None,
                BinaryAtom::Min => l.min(r),
                BinaryAtom::Max => l.max(r),
            }
        }
    };
    v.is_finite().then_some(v)
}

/// Central difference with step `h` in coordinate `i`.
pub fn central(e: &Expr, names: &[String], x: &[f64], i: usize, h: f64) -> Option<f64> {
    let mut a = x.to_vec();
    let mut b = x.to_vec();
    a[i] += h;
    b[i] -= h;
    Some((eval(e, names, &a)? - eval(e, names, &b)?) / (2.0 * h))
}

/// Two levels of Richardson extrapolation over central differences;
/// truncation error of order `h^6`.
pub fn richardson(e: &Expr, names: &[String], x: &[f64], i: usize, h: f64) -> Option<f64> {
    let d1 = central(e, names, x, i, h)?;
    let d2 = central(e, names, x, i, h / 2.0)?;
    let d4 = central(e, names, x, i, h / 4.0)?;
    let r1 = (4.0 * d2 - d1) / 3.0;
    let r2 = (4.0 * d4 - d2) / 3.0;
    Some((16.0 * r2 - r1) / 15.0)
}

pub fn fd_gradient(e: &Expr, names: &[String], x: &[f64], h: f64) -> Option<Vec<f64>> {
    (0..names.len()).map(|i| richardson(e, names, x, i, h)).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub depth: u32,
    /// Allow `abs`, `min` and `max`, which have kinks.
    pub kinks: bool,
}

/// Random expression over `x`, `y`, `z` built through the normalizing
/// constructors.
pub fn random_expr(rng: &mut ChaCha8Rng, o: GenOptions) -> Expr {
    if o.depth == 0 || rng.random_bool(0.25) {
        return leaf(rng);
    }
    let sub = GenOptions { depth: o.depth - 1, ..o };
    let choices = if o.kinks { 9 } else { 7 };
    match rng.random_range(0..choices) {
        0 => {
            let n = rng.random_range(2..=3);
            Expr::sum((0..n).map(|_| random_expr(rng, sub)).collect())
        }
        1 => Expr::product(vec![Expr::Const(coefficient(rng)), random_expr(rng, sub)]),
        2 => Expr::product(vec![random_expr(rng, sub), random_expr(rng, sub)]),
        3 => {
            let atoms = [UnaryAtom::Exp, UnaryAtom::Log, UnaryAtom::Sqrt, UnaryAtom::Square, UnaryAtom::InvPos];
            let a = atoms[rng.random_range(0..atoms.len())];
            let arg = random_expr(rng, sub);
            // keep exp arguments small enough to stay finite after nesting
            let arg = if a == UnaryAtom::Exp { Expr::product(vec![Expr::Const(0.5), arg]) } else { arg };
            Expr::unary(a, arg)
        }
        4 => {
            let p = [2.0, 3.0, 0.5, -1.0, 1.5, -0.5][rng.random_range(0..6)];
            Expr::pow(random_expr(rng, sub), p)
        }
        5 => Expr::div(random_expr(rng, sub), random_expr(rng, sub)),
        6 => Expr::sub(random_expr(rng, sub), random_expr(rng, sub)),
        7 => Expr::unary(UnaryAtom::Abs, random_expr(rng, sub)),
        _ => {
            let a = if rng.random_bool(0.5) { BinaryAtom::Min } else { BinaryAtom::Max };
            Expr::binary(a, random_expr(rng, sub), random_expr(rng, sub))
        }
    }
}

fn leaf(rng: &mut ChaCha8Rng) -> Expr {
    if rng.random_bool(0.75) {
        Expr::var(NAMES[rng.random_range(0..NAMES.len())])
    } else {
        Expr::Const(coefficient(rng))
    }
}

fn coefficient(rng: &mut ChaCha8Rng) -> f64 {
    let c = (rng.random_range(-30..=30) as f64) / 10.0;
    if c == 0.0 {
        1.0
    } else {
        c
    }
}

pub fn random_point(rng: &mut ChaCha8Rng, lo: &[f64], hi: &[f64]) -> Vec<f64> {
    lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..=*h)).collect()
}

/// `|a - b| ≤ tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub type Compiled = Box<dyn Fn(&[f64]) -> Option<f64> + Send + Sync>;

/// Closure form of `eval`, for brute-force grids.
pub fn compile(e: &Expr, names: &[String]) -> Compiled {
    match e {
        Expr::Const(c) => {
            let c = *c;
            Box::new(move |_| Some(c))
        }
        Expr::Var(n) => {
            let i = names.iter().position(|m| m == n).expect("declared variable");
            Box::new(move |x| Some(x[i]))
        }
        Expr::Sum(ts) => {
            let ts: Vec<Compiled> = ts.iter().map(|t| compile(t, names)).collect();
            Box::new(move |x| ts.iter().map(|t| t(x)).sum::<Option<f64>>().filter(|v| v.is_finite()))
        }
        Expr::Product(fs) => {
            let fs: Vec<Compiled> = fs.iter().map(|f| compile(f, names)).collect();
            Box::new(move |x| fs.iter().map(|f| f(x)).product::<Option<f64>>().filter(|v| v.is_finite()))
        }
        Expr::Pow(b, p) => {
            let (b, p) = (compile(b, names), *p);
            Box::new(move |x| {
                let b = b(x)?;
                if (p.fract() != 0.0 && b < 0.0) || (p < 0.0 && b == 0.0) {
                    return None;
                }
                Some(b.powf(p)).filter(|v| v.is_finite())
            })
        }
        Expr::Unary(a, arg) => {
            let (a, arg) = (*a, compile(arg, names));
            Box::new(move |x| {
                let v = Expr::Unary(a, Box::new(Expr::Const(arg(x)?)));
                eval(&v, &[], &[])
            })
        }
        Expr::Binary(a, l, r) => {
            let (a, l, r) = (*a, compile(l, names), compile(r, names));
            Box::new(move |x| {
                let v = Expr::Binary(a, Box::new(Expr::Const(l(x)?)), Box::new(Expr::Const(r(x)?)));
                eval(&v, &[], &[])
            })
        }
    }
}
