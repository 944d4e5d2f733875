//! Scalar expression trees.
//!
//! Every `Expr` built through the constructors on this type is kept in a
//! normal form: nested sums and products are flattened, constants are
//! folded, and a product carries at most one numeric coefficient, always in
//! first position. Structural equality (`PartialEq`) is therefore equality
//! of normal forms.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Single-argument atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryAtom {
    Exp,
    Log,
    Sqrt,
    Abs,
    Square,
    /// `1/x` restricted to `x > 0`.
    InvPos,
    /// Sign function with `sign(0) = 0`. Appears in derivatives of `abs`,
    /// `min` and `max`.
    Sign,
}

/// Two-argument atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryAtom {
    Div,
    Min,
    Max,
}

impl UnaryAtom {
    pub const ALL: [UnaryAtom; 7] = [
        UnaryAtom::Exp,
        UnaryAtom::Log,
        UnaryAtom::Sqrt,
        UnaryAtom::Abs,
        UnaryAtom::Square,
        UnaryAtom::InvPos,
        UnaryAtom::Sign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryAtom::Exp => "exp",
            UnaryAtom::Log => "log",
            UnaryAtom::Sqrt => "sqrt",
            UnaryAtom::Abs => "abs",
            UnaryAtom::Square => "square",
            UnaryAtom::InvPos => "inv_pos",
            UnaryAtom::Sign => "sign",
        }
    }

    /// Applies the atom to a number, or `None` outside its domain.
    pub fn apply(self, x: f64) -> Option<f64> {
        let y = match self {
            UnaryAtom::Exp => x.exp(),
            UnaryAtom::Log if x > 0.0 => x.ln(),
            UnaryAtom::Sqrt if x >= 0.0 => x.sqrt(),
            UnaryAtom::Abs => x.abs(),
            UnaryAtom::Square => x * x,
            UnaryAtom::InvPos if x > 0.0 => 1.0 / x,
            UnaryAtom::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            _ => return None,
        };
        Some(y)
    }
}

impl BinaryAtom {
    pub fn name(self) -> &'static str {
        match self {
            BinaryAtom::Div => "/",
            BinaryAtom::Min => "min",
            BinaryAtom::Max => "max",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> Option<f64> {
        match self {
            BinaryAtom::Div if b != 0.0 => Some(a / b),
            BinaryAtom::Div => None,
            BinaryAtom::Min => Some(a.min(b)),
            BinaryAtom::Max => Some(a.max(b)),
        }
    }
}

/// `x^p` for a constant exponent, or `None` outside the real domain.
pub fn apply_pow(x: f64, p: f64) -> Option<f64> {
    let integral = p.fract() == 0.0;
    if !integral && x < 0.0 {
        return None;
    }
    if p < 0.0 && x == 0.0 {
        return None;
    }
    Some(x.powf(p))
}

/// Names accepted in function-call position by the parser, with arity.
pub const CALL_ATOMS: &[(&str, usize)] = &[
    ("exp", 1),
    ("log", 1),
    ("sqrt", 1),
    ("abs", 1),
    ("square", 1),
    ("inv_pos", 1),
    ("sign", 1),
    ("min", 2),
    ("max", 2),
    ("pow", 2),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryAtom, Box<Expr>),
    Binary(BinaryAtom, Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Flattened sum. Constants merge into one term that keeps the position
    /// of the first constant seen; a zero constant is dropped.
    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut flat = Vec::with_capacity(terms.len());
        let mut constant: Option<(usize, f64)> = None;
        let mut push = |e: Expr, flat: &mut Vec<Expr>| match e {
            Expr::Const(c) => match &mut constant {
                Some((_, acc)) => *acc += c,
                None => {
                    constant = Some((flat.len(), c));
                    flat.push(Expr::Const(c));
                }
            },
            other => flat.push(other),
        };
        for t in terms {
            match t {
                Expr::Sum(inner) => {
                    for e in inner {
                        push(e, &mut flat);
                    }
                }
                other => push(other, &mut flat),
            }
        }
        if let Some((pos, c)) = constant {
            if c == 0.0 && flat.len() > 1 {
                flat.remove(pos);
            } else {
                flat[pos] = Expr::Const(c);
            }
        }
        match flat.len() {
            0 => Expr::Const(0.0),
            1 => flat.pop().unwrap(),
            _ => Expr::Sum(flat),
        }
    }

    /// Flattened product with a single leading coefficient.
    pub fn product(factors: Vec<Expr>) -> Expr {
        let mut coef = 1.0;
        let mut rest = Vec::with_capacity(factors.len());
        for f in factors {
            match f {
                Expr::Const(c) => coef *= c,
                Expr::Product(inner) => {
                    for g in inner {
                        match g {
                            Expr::Const(c) => coef *= c,
                            other => rest.push(other),
                        }
                    }
                }
                other => rest.push(other),
            }
        }
        if coef == 0.0 {
            return Expr::Const(0.0);
        }
        if rest.is_empty() {
            return Expr::Const(coef);
        }
        if coef == 1.0 {
            if rest.len() == 1 {
                return rest.pop().unwrap();
            }
            return Expr::Product(rest);
        }
        let mut out = Vec::with_capacity(rest.len() + 1);
        out.push(Expr::Const(coef));
        out.extend(rest);
        Expr::Product(out)
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::product(vec![Expr::Const(-1.0), e])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, Expr::neg(b)])
    }

    pub fn unary(atom: UnaryAtom, arg: Expr) -> Expr {
        if let Expr::Const(c) = arg {
            if let Some(v) = atom.apply(c).filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        Expr::Unary(atom, Box::new(arg))
    }

    pub fn binary(atom: BinaryAtom, a: Expr, b: Expr) -> Expr {
        if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
            if let Some(v) = atom.apply(*x, *y).filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        if atom == BinaryAtom::Div {
            if let Expr::Const(d) = b {
                if d != 0.0 && (1.0 / d).is_finite() {
                    return Expr::product(vec![Expr::Const(1.0 / d), a]);
                }
            }
        }
        Expr::Binary(atom, Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinaryAtom::Div, a, b)
    }

    pub fn pow(base: Expr, p: f64) -> Expr {
        if p == 1.0 {
            return base;
        }
        if p == 0.0 {
            return Expr::Const(1.0);
        }
        if let Expr::Const(c) = base {
            if let Some(v) = apply_pow(c, p).filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        Expr::Pow(Box::new(base), p)
    }

    /// Rebuilds the tree through the normalizing constructors.
    pub fn normalized(&self) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => Expr::Var(v.clone()),
            Expr::Unary(a, e) => Expr::unary(*a, e.normalized()),
            Expr::Binary(a, l, r) => Expr::binary(*a, l.normalized(), r.normalized()),
            Expr::Pow(b, p) => Expr::pow(b.normalized(), *p),
            Expr::Sum(ts) => Expr::sum(ts.iter().map(Expr::normalized).collect()),
            Expr::Product(fs) => Expr::product(fs.iter().map(Expr::normalized).collect()),
        }
    }

    /// Direct children, in order.
    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => Vec::new(),
            Expr::Unary(_, e) | Expr::Pow(e, _) => vec![e],
            Expr::Binary(_, a, b) => vec![a, b],
            Expr::Sum(v) | Expr::Product(v) => v.iter().collect(),
        }
    }

    /// Names of referenced variables, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        if let Expr::Var(v) = self {
            out.insert(v.clone());
        }
        for c in self.children() {
            c.collect_vars(out);
        }
    }

    pub fn depends_on(&self, name: &str) -> bool {
        match self {
            Expr::Var(v) => v == name,
            _ => self.children().into_iter().any(|c| c.depends_on(name)),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            _ => self.children().into_iter().all(Expr::is_constant),
        }
    }

    /// Every numeric literal in the tree, including product coefficients.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_consts(&mut out);
        out
    }

    fn collect_consts(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Const(c) => out.push(*c),
            Expr::Pow(b, p) => {
                out.push(*p);
                b.collect_consts(out);
            }
            _ => {
                for c in self.children() {
                    c.collect_consts(out);
                }
            }
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Expr::size).sum::<usize>()
    }

    /// Additive terms: the children of a top-level sum, or the expression
    /// itself.
    pub fn terms(&self) -> Vec<&Expr> {
        match self {
            Expr::Sum(ts) => ts.iter().collect(),
            other => vec![other],
        }
    }

    /// Replaces every occurrence of the named variables.
    pub fn substitute(&self, f: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Var(v) => f(v).unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Const(c) => Expr::Const(*c),
            Expr::Unary(a, e) => Expr::unary(*a, e.substitute(f)),
            Expr::Binary(a, l, r) => Expr::binary(*a, l.substitute(f), r.substitute(f)),
            Expr::Pow(b, p) => Expr::pow(b.substitute(f), *p),
            Expr::Sum(ts) => Expr::sum(ts.iter().map(|t| t.substitute(f)).collect()),
            Expr::Product(fs) => Expr::product(fs.iter().map(|t| t.substitute(f)).collect()),
        }
    }
}
