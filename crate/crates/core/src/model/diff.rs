//! Symbolic differentiation.
//!
//! Kinks use the sign convention `sign(0) = 0`: the derivative of `abs` at
//! zero is 0, and `min`/`max` at a tie take the average of both branch
//! derivatives. Both are valid subgradients of the convex/concave atoms.

use super::expr::{BinaryAtom, Expr, UnaryAtom};

pub fn differentiate(e: &Expr, var: &str) -> Expr {
    if !e.depends_on(var) {
        return Expr::Const(0.0);
    }
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if v == var { 1.0 } else { 0.0 }),
        Expr::Sum(ts) => Expr::sum(ts.iter().map(|t| differentiate(t, var)).collect()),
        Expr::Product(fs) => {
            let mut terms = Vec::new();
            for (i, f) in fs.iter().enumerate() {
                let df = differentiate(f, var);
                if df.is_zero() {
                    continue;
                }
                let mut factors = Vec::with_capacity(fs.len());
                for (j, g) in fs.iter().enumerate() {
                    factors.push(if i == j { df.clone() } else { g.clone() });
                }
                terms.push(Expr::product(factors));
            }
            Expr::sum(terms)
        }
        Expr::Pow(u, p) => {
            let du = differentiate(u, var);
            Expr::product(vec![Expr::Const(*p), Expr::pow((**u).clone(), p - 1.0), du])
        }
        Expr::Unary(atom, u) => {
            let du = differentiate(u, var);
            let u = (**u).clone();
            let outer = match atom {
                UnaryAtom::Exp => Expr::unary(UnaryAtom::Exp, u),
                UnaryAtom::Log => return Expr::div(du, u),
                UnaryAtom::Sqrt => {
                    return Expr::div(du, Expr::product(vec![Expr::Const(2.0), Expr::unary(UnaryAtom::Sqrt, u)]))
                }
                UnaryAtom::Abs => Expr::unary(UnaryAtom::Sign, u),
                UnaryAtom::Square => Expr::product(vec![Expr::Const(2.0), u]),
                UnaryAtom::InvPos => Expr::neg(Expr::pow(u, -2.0)),
                UnaryAtom::Sign => return Expr::Const(0.0),
            };
            Expr::product(vec![outer, du])
        }
        Expr::Binary(BinaryAtom::Div, a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            if db.is_zero() {
                return Expr::div(da, b);
            }
            let num = Expr::sum(vec![
                Expr::product(vec![da, b.clone()]),
                Expr::neg(Expr::product(vec![a, db])),
            ]);
            Expr::div(num, Expr::pow(b, 2.0))
        }
        Expr::Binary(atom, a, b) => {
            // min/max(a, b) = (a + b)/2 -/+ |a - b|/2
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            let s = Expr::unary(UnaryAtom::Sign, Expr::sub((**a).clone(), (**b).clone()));
            let half = if *atom == BinaryAtom::Max { 0.5 } else { -0.5 };
            Expr::sum(vec![
                Expr::product(vec![Expr::Const(0.5), Expr::sum(vec![da.clone(), db.clone()])]),
                Expr::product(vec![Expr::Const(half), s, Expr::sub(da, db)]),
            ])
        }
    }
}

/// Gradient with respect to `vars`, in that order.
pub fn gradient(e: &Expr, vars: &[String]) -> Vec<Expr> {
    vars.iter().map(|v| differentiate(e, v)).collect()
}
