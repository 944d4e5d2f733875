//! Unit conversion for constraint values.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Power,
    Frequency,
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Multiple of the base unit.
    Linear(f64),
    /// Decibel-milliwatts over watts.
    Dbm,
}

fn lookup(unit: &str) -> Option<(Dimension, Scale)> {
    use Dimension::*;
    use Scale::*;
    Some(match unit {
        "W" => (Power, Linear(1.0)),
        "mW" => (Power, Linear(1e-3)),
        "uW" | "µW" => (Power, Linear(1e-6)),
        "kW" => (Power, Linear(1e3)),
        "dBm" => (Power, Dbm),
        "Hz" => (Frequency, Linear(1.0)),
        "kHz" => (Frequency, Linear(1e3)),
        "MHz" => (Frequency, Linear(1e6)),
        "GHz" => (Frequency, Linear(1e9)),
        "s" => (Time, Linear(1.0)),
        "ms" => (Time, Linear(1e-3)),
        "us" | "µs" => (Time, Linear(1e-6)),
        _ => return None,
    })
}

fn to_base(v: f64, s: Scale) -> f64 {
    match s {
        Scale::Linear(k) => v * k,
        Scale::Dbm => 10f64.powf((v - 30.0) / 10.0),
    }
}

fn from_base(v: f64, s: Scale) -> f64 {
    match s {
        Scale::Linear(k) => v / k,
        Scale::Dbm => 10.0 * v.log10() + 30.0,
    }
}

/// Spellings of a dimensionless quantity.
pub fn is_dimensionless(unit: &str) -> bool {
    matches!(unit.trim(), "" | "1" | "-")
}

/// `value` in `from` expressed in `to`; `None` across dimensions or for
/// unknown units that differ.
pub fn convert(value: f64, from: &str, to: &str) -> Option<f64> {
    let (from, to) = (from.trim(), to.trim());
    if from == to || (is_dimensionless(from) && is_dimensionless(to)) {
        return Some(value);
    }
    let (df, sf) = lookup(from)?;
    let (dt, st) = lookup(to)?;
    (df == dt).then(|| from_base(to_base(value, sf), st))
}
