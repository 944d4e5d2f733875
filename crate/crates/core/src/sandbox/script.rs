//! The line-oriented solve script.
//!
//! ```text
//! solver internal
//! set tolerance 1e-8
//! start p 1.5
//! model {"variables": [...], ...}
//! solve
//! ```
//!
//! A multi-line document may sit between `model begin` and `model end`.
//! `#` starts a comment line.

use std::fmt;

use thiserror::Error;

use crate::solver::SolverOptions;

/// Stands in for the canonical model document in generated text.
pub const MODEL_PLACEHOLDER: &str = "{{model}}";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Tolerance,
    MaxInner,
    MaxOuter,
    ScaThreshold,
    Damping,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Tolerance,
        Setting::MaxInner,
        Setting::MaxOuter,
        Setting::ScaThreshold,
        Setting::Damping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Tolerance => "tolerance",
            Setting::MaxInner => "max_inner",
            Setting::MaxOuter => "max_outer",
            Setting::ScaThreshold => "sca_threshold",
            Setting::Damping => "damping",
        }
    }

    fn parse(s: &str) -> Option<Setting> {
        Setting::ALL.into_iter().find(|k| k.name() == s)
    }

    fn is_count(self) -> bool {
        matches!(self, Setting::MaxInner | Setting::MaxOuter)
    }

    fn apply(self, v: f64, o: &mut SolverOptions) {
        match self {
            Setting::Tolerance => o.tolerance = v,
            Setting::MaxInner => o.max_inner = v as usize,
            Setting::MaxOuter => o.max_outer = v as usize,
            Setting::ScaThreshold => o.sca_threshold = v,
            Setting::Damping => o.damping = v,
        }
    }

    fn get(self, o: &SolverOptions) -> f64 {
        match self {
            Setting::Tolerance => o.tolerance,
            Setting::MaxInner => o.max_inner as f64,
            Setting::MaxOuter => o.max_outer as f64,
            Setting::ScaThreshold => o.sca_threshold,
            Setting::Damping => o.damping,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverId {
    Internal,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    /// The placeholder was never substituted.
    Placeholder,
    Json(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub solver: Option<SolverId>,
    pub settings: Vec<(Setting, f64)>,
    pub starts: Vec<(String, f64)>,
    pub model: Option<Model>,
    /// 1-based line of the `model` statement.
    pub model_line: usize,
}

impl Script {
    pub fn options(&self, base: SolverOptions) -> SolverOptions {
        let mut o = base;
        for (k, v) in &self.settings {
            k.apply(*v, &mut o);
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
    pub excerpt: String,
}

fn number(tok: &str) -> Option<f64> {
    tok.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse(text: &str) -> Result<Script, SyntaxError> {
    let mut script = Script {
        solver: None,
        settings: Vec::new(),
        starts: Vec::new(),
        model: None,
        model_line: 0,
    };
    let mut solved = false;
    let mut block: Option<(usize, String)> = None;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let err = |message: String| SyntaxError {
            line: line_no,
            message,
            excerpt: raw.trim().to_string(),
        };
        if let Some((start, buf)) = block.as_mut() {
            if raw.trim() == "model end" {
                script.model = Some(Model::Json(std::mem::take(buf)));
                script.model_line = *start;
                block = None;
            } else {
                buf.push_str(raw);
                buf.push('\n');
            }
            continue;
        }
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if solved {
            return Err(err("statement after `solve`".into()));
        }
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let words: Vec<&str> = rest.split_whitespace().collect();
        match head {
            "solver" => {
                script.solver = Some(match rest {
                    "internal" => SolverId::Internal,
                    "external" => SolverId::External,
                    other => return Err(err(format!("unknown solver `{other}`"))),
                })
            }
            "set" => {
                let [key, value] = words[..] else {
                    return Err(err("expected `set <option> <number>`".into()));
                };
                let key = Setting::parse(key).ok_or_else(|| err(format!("unknown option `{key}`")))?;
                let v = number(value).ok_or_else(|| err(format!("`{value}` is not a number")))?;
                if key.is_count() && (v.fract() != 0.0 || v < 0.0) {
                    return Err(err(format!("`{}` takes a count", key.name())));
                }
                script.settings.push((key, v));
            }
            "start" => {
                let [name, value] = words[..] else {
                    return Err(err("expected `start <variable> <number>`".into()));
                };
                let v = number(value).ok_or_else(|| err(format!("`{value}` is not a number")))?;
                script.starts.push((name.to_string(), v));
            }
            "model" => {
                if script.model.is_some() {
                    return Err(err("second model statement".into()));
                }
                match rest {
                    "" => return Err(err("`model` needs a document".into())),
                    "begin" => block = Some((line_no, String::new())),
                    MODEL_PLACEHOLDER => {
                        script.model = Some(Model::Placeholder);
                        script.model_line = line_no;
                    }
                    json => {
                        script.model = Some(Model::Json(json.to_string()));
                        script.model_line = line_no;
                    }
                }
            }
            "solve" if rest.is_empty() => solved = true,
            other => return Err(err(format!("unknown statement `{other}`"))),
        }
    }
    if let Some((start, _)) = block {
        return Err(SyntaxError {
            line: start,
            message: "`model begin` without `model end`".into(),
            excerpt: "model begin".into(),
        });
    }
    if !solved {
        let lines = text.lines().count();
        return Err(SyntaxError {
            line: lines.max(1),
            message: "script never calls `solve`".into(),
            excerpt: String::new(),
        });
    }
    Ok(script)
}

/// Emits a script that parses back to the same settings and starts.
pub fn render(solver: SolverId, options: &SolverOptions, starts: &[(String, f64)], model_json: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("solver {solver}\n"));
    let defaults = SolverOptions::default();
    for k in Setting::ALL {
        if k.get(options) != k.get(&defaults) {
            out.push_str(&format!("set {} {:?}\n", k.name(), k.get(options)));
        }
    }
    for (n, v) in starts {
        out.push_str(&format!("start {n} {v:?}\n"));
    }
    out.push_str(&format!("model {model_json}\nsolve\n"));
    out
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverId::Internal => "internal",
            SolverId::External => "external",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_script() {
        let s = parse("# c\nsolver internal\nset tolerance 1e-9\nset max_outer 3\nstart p 2\nmodel {\"a\":1}\nsolve\n").unwrap();
        assert_eq!(s.solver, Some(SolverId::Internal));
        assert_eq!(s.settings, vec![(Setting::Tolerance, 1e-9), (Setting::MaxOuter, 3.0)]);
        assert_eq!(s.starts, vec![("p".to_string(), 2.0)]);
        assert_eq!(s.model, Some(Model::Json("{\"a\":1}".into())));
        assert_eq!(s.model_line, 6);
        let o = s.options(SolverOptions::default());
        assert_eq!((o.tolerance, o.max_outer), (1e-9, 3));
    }

    #[test]
    fn model_block() {
        let s = parse("model begin\n{\n \"a\": 1\n}\nmodel end\nsolve").unwrap();
        assert_eq!(s.model, Some(Model::Json("{\n \"a\": 1\n}\n".into())));
        assert!(parse("model begin\n{}\nsolve").is_err());
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = parse("solver internal\nsolv\n").unwrap_err();
        assert_eq!(e.line, 2);
        assert_eq!(e.excerpt, "solv");
        assert!(parse("set tolerance abc\nsolve").is_err());
        assert!(parse("set speed 1\nsolve").is_err());
        assert!(parse("set max_inner 2.5\nsolve").is_err());
        assert!(parse("start p\nsolve").is_err());
        assert!(parse("solve\nstart p 1").is_err());
        assert!(parse("model {{model}}\n").unwrap_err().message.contains("never calls"));
    }

    #[test]
    fn placeholder_is_recognized() {
        let s = parse("model {{model}}\nsolve").unwrap();
        assert_eq!(s.model, Some(Model::Placeholder));
    }

    #[test]
    fn render_round_trip() {
        let o = SolverOptions { max_outer: 1, damping: 0.5, ..Default::default() };
        let text = render(SolverId::Internal, &o, &[("x".into(), 0.1)], "{}");
        let s = parse(&text).unwrap();
        assert_eq!(s.options(SolverOptions::default()), o);
        assert_eq!(s.starts, vec![("x".to_string(), 0.1)]);
    }
}
