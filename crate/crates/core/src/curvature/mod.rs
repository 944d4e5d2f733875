//! Curvature analysis.
//!
//! Labels come from composition rules over the atom table. A univariate
//! node the rules cannot classify is tested by sampling its second
//! derivative on the variable's bound interval; such labels carry
//! `sampled = true` and are not proofs.

mod interval;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use interval::Interval;

use crate::model::{differentiate, evaluate, BinaryAtom, Expr, StandardForm, UnaryAtom, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Constant,
    Affine,
    Convex,
    Concave,
    Unknown,
}

impl Curvature {
    pub fn is_convex(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Convex)
    }

    pub fn is_concave(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine | Curvature::Concave)
    }

    pub fn is_affine(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::Affine)
    }

    pub fn negate(self) -> Curvature {
        match self {
            Curvature::Convex => Curvature::Concave,
            Curvature::Concave => Curvature::Convex,
            other => other,
        }
    }

    /// Least upper bound in the lattice constant < affine < {convex, concave} < unknown.
    pub fn join(self, o: Curvature) -> Curvature {
        use Curvature::*;
        match (self, o) {
            (Constant, x) | (x, Constant) => x,
            (Affine, x) | (x, Affine) => x,
            (a, b) if a == b => a,
            _ => Unknown,
        }
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Curvature::Constant => "constant",
            Curvature::Affine => "affine",
            Curvature::Convex => "convex",
            Curvature::Concave => "concave",
            Curvature::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Nonneg,
    Nonpos,
    Unknown,
}

impl Sign {
    fn of(r: Interval) -> Sign {
        if r.nonneg() {
            Sign::Nonneg
        } else if r.nonpos() {
            Sign::Nonpos
        } else {
            Sign::Unknown
        }
    }
}

/// Per-variable bound intervals.
#[derive(Debug, Clone, Default)]
pub struct Bounds(BTreeMap<String, Interval>);

impl Bounds {
    pub fn from_variables(vars: &[Variable]) -> Bounds {
        Bounds(
            vars.iter()
                .map(|v| (v.name.clone(), Interval { lo: v.lower, hi: v.upper }))
                .collect(),
        )
    }

    pub fn get(&self, name: &str) -> Interval {
        self.0.get(name).copied().unwrap_or(Interval::ENTIRE)
    }

    pub fn insert(&mut self, name: impl Into<String>, r: Interval) {
        self.0.insert(name.into(), r);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub curvature: Curvature,
    pub sign: Sign,
    pub range: Interval,
    /// Set when any part of the label rests on sampling.
    pub sampled: bool,
    /// Innermost rule failure, when the label is unknown.
    pub reason: Option<String>,
}

impl Analysis {
    fn new(curvature: Curvature, range: Interval) -> Analysis {
        Analysis {
            curvature,
            sign: Sign::of(range),
            range,
            sampled: false,
            reason: None,
        }
    }

    fn unknown(range: Interval, reason: String) -> Analysis {
        Analysis {
            reason: Some(reason),
            ..Analysis::new(Curvature::Unknown, range)
        }
    }
}

/// Number of interior points for the second-derivative fallback.
pub const SAMPLE_POINTS: usize = 33;

/// Width used in place of an infinite side of a bound interval when sampling.
const UNBOUNDED_SPAN: f64 = 10.0;

pub fn curvature_of(e: &Expr, bounds: &Bounds) -> Analysis {
    let mut a = rules(e, bounds);
    if a.curvature == Curvature::Unknown {
        if let Some(s) = sampled_fallback(e, bounds) {
            a = Analysis {
                sampled: true,
                reason: None,
                ..Analysis::new(s, a.range)
            };
        }
    }
    a
}

#[derive(Clone, Copy, PartialEq)]
enum Mono {
    Increasing,
    Decreasing,
    None,
}

/// Curvature of `f(g)` from the atom's curvature on the argument range
/// and its monotonicity.
fn compose(outer: Curvature, mono: Mono, inner: Curvature) -> Curvature {
    if inner == Curvature::Constant {
        return Curvature::Constant;
    }
    if inner.is_affine() {
        return outer;
    }
    let convex = outer.is_convex()
        && match mono {
            Mono::Increasing => inner.is_convex(),
            Mono::Decreasing => inner.is_concave(),
            Mono::None => false,
        };
    let concave = outer.is_concave()
        && match mono {
            Mono::Increasing => inner.is_concave(),
            Mono::Decreasing => inner.is_convex(),
            Mono::None => false,
        };
    match (convex, concave) {
        (true, true) => Curvature::Affine,
        (true, false) => Curvature::Convex,
        (false, true) => Curvature::Concave,
        _ => Curvature::Unknown,
    }
}

/// Curvature and monotonicity of an even atom (|x|, x^2, x^2k) on `r`.
fn even_atom(r: Interval) -> (Curvature, Mono) {
    let mono = if r.nonneg() {
        Mono::Increasing
    } else if r.nonpos() {
        Mono::Decreasing
    } else {
        Mono::None
    };
    (Curvature::Convex, mono)
}

fn unary_atom(atom: UnaryAtom, r: Interval) -> Option<(Curvature, Mono)> {
    Some(match atom {
        UnaryAtom::Exp => (Curvature::Convex, Mono::Increasing),
        UnaryAtom::Log | UnaryAtom::Sqrt => (Curvature::Concave, Mono::Increasing),
        UnaryAtom::Abs | UnaryAtom::Square => even_atom(r),
        UnaryAtom::InvPos => (Curvature::Convex, Mono::Decreasing),
        UnaryAtom::Sign => return None,
    })
}

fn pow_atom(p: f64, r: Interval) -> Option<(Curvature, Mono)> {
    let integral = p.fract() == 0.0;
    let even = integral && (p as i64) % 2 == 0;
    if p >= 1.0 {
        if even {
            return Some(even_atom(r));
        }
        if integral {
            // odd power: convex on x >= 0, concave on x <= 0
            return if r.nonneg() {
                Some((Curvature::Convex, Mono::Increasing))
            } else if r.nonpos() {
                Some((Curvature::Concave, Mono::Increasing))
            } else {
                None
            };
        }
        return r.nonneg().then_some((Curvature::Convex, Mono::Increasing));
    }
    if p > 0.0 {
        return Some((Curvature::Concave, Mono::Increasing));
    }
    // p < 0
    if r.positive() || (!integral && r.nonneg()) {
        return Some((Curvature::Convex, Mono::Decreasing));
    }
    if integral && r.hi < 0.0 {
        return Some(if even {
            (Curvature::Convex, Mono::Increasing)
        } else {
            (Curvature::Concave, Mono::Decreasing)
        });
    }
    None
}

fn scale(a: &Analysis, c: f64) -> Curvature {
    if c >= 0.0 {
        a.curvature
    } else {
        a.curvature.negate()
    }
}

fn rules(e: &Expr, b: &Bounds) -> Analysis {
    match e {
        Expr::Const(c) => Analysis::new(Curvature::Constant, Interval::point(*c)),
        Expr::Var(v) => Analysis::new(Curvature::Affine, b.get(v)),
        Expr::Sum(ts) => {
            let parts: Vec<Analysis> = ts.iter().map(|t| curvature_of(t, b)).collect();
            let range = parts.iter().fold(Interval::point(0.0), |acc, a| acc.add(a.range));
            let curv = parts.iter().fold(Curvature::Constant, |acc, a| acc.join(a.curvature));
            let sampled = parts.iter().any(|a| a.sampled);
            if curv == Curvature::Unknown {
                let reason = parts
                    .iter()
                    .find_map(|a| a.reason.clone())
                    .unwrap_or_else(|| "sum of convex and concave terms".into());
                return Analysis::unknown(range, reason);
            }
            Analysis {
                sampled,
                ..Analysis::new(curv, range)
            }
        }
        Expr::Product(fs) => {
            let parts: Vec<Analysis> = fs.iter().map(|f| curvature_of(f, b)).collect();
            let range = parts.iter().fold(Interval::point(1.0), |acc, a| acc.mul(a.range));
            let varying: Vec<usize> = (0..parts.len())
                .filter(|&i| parts[i].curvature != Curvature::Constant)
                .collect();
            match varying.as_slice() {
                [] => Analysis::new(Curvature::Constant, range),
                [i] => {
                    let k = parts
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| j != i)
                        .fold(Interval::point(1.0), |acc, (_, a)| acc.mul(a.range));
                    let inner = &parts[*i];
                    let curv = if k.nonneg() {
                        scale(inner, 1.0)
                    } else if k.nonpos() {
                        scale(inner, -1.0)
                    } else if inner.curvature.is_affine() {
                        Curvature::Affine
                    } else {
                        Curvature::Unknown
                    };
                    if curv == Curvature::Unknown {
                        let reason = inner
                            .reason
                            .clone()
                            .unwrap_or_else(|| format!("coefficient of unknown sign on `{}`", fs[*i]));
                        return Analysis::unknown(range, reason);
                    }
                    Analysis {
                        sampled: inner.sampled,
                        ..Analysis::new(curv, range)
                    }
                }
                _ => Analysis::unknown(range, format!("product of non-constant factors `{e}`")),
            }
        }
        Expr::Unary(atom, arg) => {
            let inner = curvature_of(arg, b);
            let range = inner.range.unary(*atom);
            let Some((outer, mono)) = unary_atom(*atom, inner.range) else {
                return Analysis::unknown(range, format!("{} has no curvature rule", atom.name()));
            };
            finish(compose(outer, mono, inner.curvature), range, &inner, || {
                format!("{} of a {} argument `{arg}`", atom.name(), inner.curvature)
            })
        }
        Expr::Pow(base, p) => {
            let inner = curvature_of(base, b);
            let range = inner.range.pow(*p);
            let Some((outer, mono)) = pow_atom(*p, inner.range) else {
                return Analysis::unknown(range, format!("power {p} over a sign-changing base `{base}`"));
            };
            finish(compose(outer, mono, inner.curvature), range, &inner, || {
                format!("power {p} of a {} base `{base}`", inner.curvature)
            })
        }
        Expr::Binary(BinaryAtom::Div, num, den) => {
            let n = curvature_of(num, b);
            let d = curvature_of(den, b);
            let range = n.range.binary(BinaryAtom::Div, d.range);
            if d.curvature == Curvature::Constant {
                let c = if d.range.positive() { 1.0 } else { -1.0 };
                return Analysis {
                    sampled: n.sampled,
                    ..Analysis::new(scale(&n, c), range)
                };
            }
            if n.curvature != Curvature::Constant {
                return Analysis::unknown(range, format!("division by a non-constant expression `{e}`"));
            }
            // c / g = c * inv(g)
            let (outer, mono) = if d.range.positive() {
                (Curvature::Convex, Mono::Decreasing)
            } else if d.range.hi < 0.0 {
                (Curvature::Concave, Mono::Decreasing)
            } else {
                return Analysis::unknown(range, format!("denominator of `{e}` may vanish"));
            };
            let inv = compose(outer, mono, d.curvature);
            let curv = if n.range.nonneg() {
                inv
            } else if n.range.nonpos() {
                inv.negate()
            } else {
                Curvature::Unknown
            };
            finish(curv, range, &d, || format!("reciprocal of a {} expression `{den}`", d.curvature))
        }
        Expr::Binary(atom, x, y) => {
            let l = curvature_of(x, b);
            let r = curvature_of(y, b);
            let range = l.range.binary(*atom, r.range);
            let joined = l.curvature.join(r.curvature);
            let curv = match atom {
                BinaryAtom::Max if joined.is_convex() => {
                    if joined == Curvature::Constant {
                        Curvature::Constant
                    } else {
                        Curvature::Convex
                    }
                }
                BinaryAtom::Min if joined.is_concave() => {
                    if joined == Curvature::Constant {
                        Curvature::Constant
                    } else {
                        Curvature::Concave
                    }
                }
                _ => Curvature::Unknown,
            };
            let sampled = l.sampled || r.sampled;
            if curv == Curvature::Unknown {
                return Analysis::unknown(range, format!("{} of {} and {} arguments", atom.name(), l.curvature, r.curvature));
            }
            Analysis {
                sampled,
                ..Analysis::new(curv, range)
            }
        }
    }
}

fn finish(curv: Curvature, range: Interval, inner: &Analysis, reason: impl FnOnce() -> String) -> Analysis {
    if curv == Curvature::Unknown {
        Analysis::unknown(range, inner.reason.clone().unwrap_or_else(reason))
    } else {
        Analysis {
            sampled: inner.sampled,
            ..Analysis::new(curv, range)
        }
    }
}

/// Finite interval stand-in for sampling over a possibly unbounded range.
pub fn sampling_interval(r: Interval) -> (f64, f64) {
    match (r.lo.is_finite(), r.hi.is_finite()) {
        (true, true) => (r.lo, r.hi),
        (true, false) => (r.lo, r.lo + UNBOUNDED_SPAN),
        (false, true) => (r.hi - UNBOUNDED_SPAN, r.hi),
        (false, false) => (-UNBOUNDED_SPAN, UNBOUNDED_SPAN),
    }
}

fn sampled_fallback(e: &Expr, b: &Bounds) -> Option<Curvature> {
    let vars = e.variables();
    if vars.len() != 1 {
        return None;
    }
    let name = vars.into_iter().next().unwrap();
    let (lo, hi) = sampling_interval(b.get(&name));
    if !(hi > lo) {
        return None;
    }
    let d2 = differentiate(&differentiate(e, &name), &name);
    let mut all_nonneg = true;
    let mut all_nonpos = true;
    for k in 1..=SAMPLE_POINTS {
        let x = lo + (hi - lo) * k as f64 / (SAMPLE_POINTS + 1) as f64;
        let v = evaluate(&d2, &|n: &str| (n == name).then_some(x)).ok()?;
        let tol = 1e-12 * (1.0 + v.abs());
        all_nonneg &= v >= -tol;
        all_nonpos &= v <= tol;
    }
    match (all_nonneg, all_nonpos) {
        (true, true) => Some(Curvature::Affine),
        (true, false) => Some(Curvature::Convex),
        (false, true) => Some(Curvature::Concave),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "lowercase")]
pub enum Location {
    Objective,
    Inequality(usize),
    Equality(usize),
    /// A discrete variable, named.
    Variable(String),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Objective => write!(f, "objective"),
            Location::Inequality(i) => write!(f, "inequality {i}"),
            Location::Equality(j) => write!(f, "equality {j}"),
            Location::Variable(v) => write!(f, "variable {v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Offender {
    pub location: Location,
    /// The additive term at fault, or the whole component.
    pub expr: Expr,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabel {
    pub location: Location,
    pub curvature: Curvature,
    pub sampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub problem_convex: bool,
    pub offenders: Vec<Offender>,
    pub labels: Vec<ComponentLabel>,
    /// Some label relied on the sampling fallback.
    pub sampled: bool,
}

impl ConvexityReport {
    pub fn offenders_at<'a>(&'a self, loc: &'a Location) -> impl Iterator<Item = &'a Offender> + 'a {
        self.offenders.iter().filter(move |o| &o.location == loc)
    }

    pub fn has_discrete_offender(&self) -> bool {
        self.offenders.iter().any(|o| matches!(o.location, Location::Variable(_)))
    }
}

/// Offending additive terms of a component that must satisfy `ok`.
fn component_offenders(
    location: Location,
    e: &Expr,
    whole: &Analysis,
    bounds: &Bounds,
    ok: fn(Curvature) -> bool,
    need: &str,
) -> Vec<Offender> {
    if ok(whole.curvature) {
        return Vec::new();
    }
    let mut out = Vec::new();
    if let Expr::Sum(ts) = e {
        for t in ts {
            let a = curvature_of(t, bounds);
            if !ok(a.curvature) {
                out.push(Offender {
                    location: location.clone(),
                    expr: t.clone(),
                    reason: a.reason.unwrap_or_else(|| format!("{} term where {need} is required", a.curvature)),
                });
            }
        }
    }
    if out.is_empty() {
        out.push(Offender {
            location,
            expr: e.clone(),
            reason: whole
                .reason
                .clone()
                .unwrap_or_else(|| format!("{} where {need} is required", whole.curvature)),
        });
    }
    out
}

pub fn analyze_problem(p: &StandardForm) -> ConvexityReport {
    let bounds = Bounds::from_variables(&p.variables);
    let mut offenders = Vec::new();
    let mut labels = Vec::new();
    let mut check = |loc: Location, e: &Expr, ok: fn(Curvature) -> bool, need: &str| {
        let a = curvature_of(e, &bounds);
        labels.push(ComponentLabel {
            location: loc.clone(),
            curvature: a.curvature,
            sampled: a.sampled,
        });
        offenders.extend(component_offenders(loc, e, &a, &bounds, ok, need));
    };
    check(Location::Objective, &p.objective, Curvature::is_convex, "convex");
    for (i, c) in p.inequalities.iter().enumerate() {
        check(Location::Inequality(i), &c.lhs, Curvature::is_convex, "convex");
    }
    for (j, c) in p.equalities.iter().enumerate() {
        check(Location::Equality(j), &c.lhs, Curvature::is_affine, "affine");
    }
    for v in p.variables.iter().filter(|v| v.var_type.is_discrete()) {
        offenders.push(Offender {
            location: Location::Variable(v.name.clone()),
            expr: Expr::Var(v.name.clone()),
            reason: format!("{} variable", v.var_type),
        });
    }
    let sampled = labels.iter().any(|l| l.sampled);
    ConvexityReport {
        problem_convex: offenders.is_empty(),
        offenders,
        labels,
        sampled,
    }
}
