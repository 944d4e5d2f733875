//! Infix printer. Output re-parses to the same normal form.

use std::fmt::{self, Write};

use super::expr::{BinaryAtom, Expr};

/// Binding strength of the printed form; an operand printed where a
/// stronger form is required gets parentheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Level {
    Sum,
    Product,
    Unary,
    Primary,
}

pub fn format_number(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c:?}")
    }
}

fn level_of(e: &Expr) -> Level {
    match e {
        Expr::Const(c) if *c < 0.0 => Level::Unary,
        Expr::Const(_) | Expr::Var(_) | Expr::Unary(..) => Level::Primary,
        Expr::Binary(BinaryAtom::Div, ..) => Level::Product,
        Expr::Binary(..) => Level::Primary,
        // `a^p` binds tighter than unary minus; treat it as primary for
        // operand purposes.
        Expr::Pow(..) => Level::Primary,
        Expr::Sum(_) => Level::Sum,
        Expr::Product(fs) => match fs.first() {
            Some(Expr::Const(c)) if *c < 0.0 => Level::Unary,
            _ => Level::Product,
        },
    }
}

fn wrap(e: &Expr, need: Level, out: &mut String) -> fmt::Result {
    if level_of(e) < need {
        out.push('(');
        write_expr(e, out)?;
        out.push(')');
        Ok(())
    } else {
        write_expr(e, out)
    }
}

/// Writes `coef * factors` where `coef > 0`.
fn write_positive_product(coef: f64, factors: &[Expr], out: &mut String) -> fmt::Result {
    let mut first = true;
    if coef != 1.0 || factors.is_empty() {
        out.push_str(&format_number(coef));
        first = false;
    }
    for f in factors {
        if !first {
            out.push('*');
        }
        first = false;
        // Division inside a product is parenthesized to keep `a*(b/c)`
        // distinct from `(a*b)/c`.
        if matches!(f, Expr::Binary(BinaryAtom::Div, ..)) {
            out.push('(');
            write_expr(f, out)?;
            out.push(')');
        } else {
            wrap(f, Level::Primary, out)?;
        }
    }
    Ok(())
}

fn split_product(fs: &[Expr]) -> (f64, &[Expr]) {
    match fs.first() {
        Some(Expr::Const(c)) => (*c, &fs[1..]),
        _ => (1.0, fs),
    }
}

/// Writes `-(coef*factors)` given `coef > 0`.
fn write_negated(coef: f64, factors: &[Expr], out: &mut String) -> fmt::Result {
    out.push('-');
    let single_div = coef == 1.0
        && factors.len() == 1
        && matches!(factors[0], Expr::Binary(BinaryAtom::Div, ..) | Expr::Sum(_));
    if single_div {
        out.push('(');
        write_expr(&factors[0], out)?;
        out.push(')');
        Ok(())
    } else {
        write_positive_product(coef, factors, out)
    }
}

fn write_expr(e: &Expr, out: &mut String) -> fmt::Result {
    match e {
        Expr::Const(c) => out.push_str(&format_number(*c)),
        Expr::Var(v) => out.push_str(v),
        Expr::Unary(atom, arg) => {
            write!(out, "{}(", atom.name())?;
            write_expr(arg, out)?;
            out.push(')');
        }
        Expr::Binary(BinaryAtom::Div, a, b) => {
            wrap(a, Level::Product, out)?;
            out.push('/');
            wrap(b, Level::Primary, out)?;
        }
        Expr::Binary(atom, a, b) => {
            write!(out, "{}(", atom.name())?;
            write_expr(a, out)?;
            out.push_str(", ");
            write_expr(b, out)?;
            out.push(')');
        }
        Expr::Pow(b, p) => {
            if matches!(**b, Expr::Pow(..)) {
                out.push('(');
                write_expr(b, out)?;
                out.push(')');
            } else {
                wrap(b, Level::Primary, out)?;
            }
            out.push('^');
            out.push_str(&format_number(*p));
        }
        Expr::Sum(ts) => {
            for (i, t) in ts.iter().enumerate() {
                let negative = match t {
                    Expr::Const(c) => *c < 0.0,
                    Expr::Product(fs) => matches!(fs.first(), Some(Expr::Const(c)) if *c < 0.0),
                    _ => false,
                };
                if i == 0 {
                    wrap(t, Level::Product, out)?;
                    continue;
                }
                if !negative {
                    out.push_str(" + ");
                    wrap(t, Level::Product, out)?;
                    continue;
                }
                out.push_str(" - ");
                match t {
                    Expr::Const(c) => out.push_str(&format_number(-c)),
                    Expr::Product(fs) => {
                        let (coef, rest) = split_product(fs);
                        write_positive_product(-coef, rest, out)?;
                    }
                    _ => unreachable!(),
                }
            }
        }
        Expr::Product(fs) => {
            let (coef, rest) = split_product(fs);
            if coef < 0.0 {
                write_negated(-coef, rest, out)?;
            } else {
                write_positive_product(coef, rest, out)?;
            }
        }
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(self, &mut s)?;
        f.write_str(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_with;

    fn roundtrip(t: &str) -> String {
        let e = parse_with(t, &|_| true).unwrap();
        let printed = e.to_string();
        assert_eq!(parse_with(&printed, &|_| true).unwrap(), e, "printed `{printed}`");
        printed
    }

    #[test]
    fn prints_readable_forms() {
        assert_eq!(roundtrip("x - 1"), "x - 1");
        assert_eq!(roundtrip("-log(1 + p)"), "-log(1 + p)");
        assert_eq!(roundtrip("a - 2*b*c"), "a - 2*b*c");
        assert_eq!(roundtrip("-(a/b)"), "-(a/b)");
        assert_eq!(roundtrip("-a/b"), "-a/b");
        assert_eq!(roundtrip("2*(a/b)"), "2*(a/b)");
        assert_eq!(roundtrip("(x + 1)^0.5"), "(x + 1)^0.5");
        assert_eq!(roundtrip("x^-2"), "x^-2");
        assert_eq!(roundtrip("1e-20*x"), "1e-20*x");
        assert_eq!(roundtrip("a/(b*c)"), "a/(b*c)");
        assert_eq!(roundtrip("-(x + y)"), "-(x + y)");
    }
}
