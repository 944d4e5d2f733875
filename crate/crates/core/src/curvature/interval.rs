//! Closed real intervals with outward-safe arithmetic.
//!
//! Ranges are used for sign and monotonicity facts only, so every operation
//! returns a superset of the true image; [`Interval::ENTIRE`] is always a
//! valid answer.

use crate::model::{apply_pow, BinaryAtom, UnaryAtom};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Interval {
        debug_assert!(lo <= hi, "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Interval {
        Interval { lo: v, hi: v }
    }

    pub fn nonneg(self) -> bool {
        self.lo >= 0.0
    }

    pub fn nonpos(self) -> bool {
        self.hi <= 0.0
    }

    pub fn positive(self) -> bool {
        self.lo > 0.0
    }

    pub fn contains(self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_bounded(self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    fn hull(values: &[f64]) -> Interval {
        if values.iter().any(|v| v.is_nan()) {
            return Interval::ENTIRE;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    pub fn add(self, o: Interval) -> Interval {
        let lo = self.lo + o.lo;
        let hi = self.hi + o.hi;
        if lo.is_nan() || hi.is_nan() {
            Interval::ENTIRE
        } else {
            Interval { lo, hi }
        }
    }

    pub fn mul(self, o: Interval) -> Interval {
        // 0 * inf counts as 0: the zero endpoint is attained exactly.
        let m = |a: f64, b: f64| if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        Interval::hull(&[m(self.lo, o.lo), m(self.lo, o.hi), m(self.hi, o.lo), m(self.hi, o.hi)])
    }

    /// Image under a monotone function given as endpoint values.
    fn monotone(self, f: impl Fn(f64) -> f64, increasing: bool) -> Interval {
        let (a, b) = (f(self.lo), f(self.hi));
        if a.is_nan() || b.is_nan() {
            return Interval::ENTIRE;
        }
        if increasing {
            Interval { lo: a, hi: b }
        } else {
            Interval { lo: b, hi: a }
        }
    }

    fn even(self, f: impl Fn(f64) -> f64) -> Interval {
        if self.lo >= 0.0 {
            self.monotone(f, true)
        } else if self.hi <= 0.0 {
            self.monotone(f, false)
        } else {
            Interval { lo: f(0.0), hi: f(self.lo).max(f(self.hi)) }
        }
    }

    pub fn unary(self, atom: UnaryAtom) -> Interval {
        match atom {
            UnaryAtom::Exp => self.monotone(f64::exp, true),
            UnaryAtom::Log => {
                let lo = if self.lo > 0.0 { self.lo.ln() } else { f64::NEG_INFINITY };
                Interval { lo, hi: self.hi.max(0.0).ln() }.fix()
            }
            UnaryAtom::Sqrt => Interval { lo: self.lo.max(0.0).sqrt(), hi: self.hi.max(0.0).sqrt() },
            UnaryAtom::Abs => self.even(f64::abs),
            UnaryAtom::Square => self.even(|x| x * x),
            UnaryAtom::InvPos => {
                if self.lo > 0.0 {
                    self.monotone(|x| 1.0 / x, false)
                } else {
                    Interval { lo: 0.0, hi: f64::INFINITY }.maybe_tighten(self.hi)
                }
            }
            UnaryAtom::Sign => Interval { lo: sgn(self.lo), hi: sgn(self.hi) },
        }
    }

    fn maybe_tighten(self, hi_arg: f64) -> Interval {
        if hi_arg > 0.0 {
            Interval { lo: 1.0 / hi_arg, hi: self.hi }
        } else {
            self
        }
    }

    fn fix(self) -> Interval {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            Interval::ENTIRE
        } else {
            self
        }
    }

    pub fn binary(self, atom: BinaryAtom, o: Interval) -> Interval {
        match atom {
            BinaryAtom::Min => Interval { lo: self.lo.min(o.lo), hi: self.hi.min(o.hi) },
            BinaryAtom::Max => Interval { lo: self.lo.max(o.lo), hi: self.hi.max(o.hi) },
            BinaryAtom::Div => {
                if o.lo > 0.0 || o.hi < 0.0 {
                    self.mul(o.recip())
                } else {
                    Interval::ENTIRE
                }
            }
        }
    }

    fn recip(self) -> Interval {
        Interval::hull(&[1.0 / self.lo, 1.0 / self.hi])
    }

    pub fn pow(self, p: f64) -> Interval {
        let integral = p.fract() == 0.0;
        let base = if integral { self } else { Interval { lo: self.lo.max(0.0), hi: self.hi.max(0.0) } };
        let f = |x: f64| apply_pow(x, p).unwrap_or(f64::NAN);
        if p > 0.0 {
            let even = integral && (p as i64) % 2 == 0;
            if even {
                base.even(f)
            } else {
                base.monotone(f, true)
            }
        } else if base.lo > 0.0 {
            base.monotone(f, false)
        } else if base.hi < 0.0 {
            let even = (p as i64) % 2 == 0;
            base.monotone(f, even)
        } else if integral && (p as i64) % 2 == 0 {
            Interval { lo: 0.0, hi: f64::INFINITY }
        } else {
            Interval::ENTIRE
        }
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
