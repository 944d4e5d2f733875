//! Solve-script generation and isolated execution.
//!
//! The canonical model document is the source of truth: a script whose
//! embedded document differs from it is rejected before anything runs.

pub mod external;
pub mod landlock;
pub mod script;

use std::collections::BTreeMap;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convexify::{box_center, Change, ConvexifiedProblem};
use crate::curvature::analyze_problem;
use crate::extraction::prompts;
use crate::llm::{fenced_block, BackendError, Session, Stage};
use crate::model::{ModelDocument, ScaSection, StandardForm};
use crate::solver::{sca_loop, solve_convex, Solution, SolveError, SolverOptions};
pub use external::{RunnerConfig, RunnerReply, RunnerRequest, SolverChoice, PROTOCOL};
use script::{Model, SolverId, MODEL_PLACEHOLDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    #[default]
    Internal,
    ExternalRunner,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Internal => "internal",
            Target::ExternalRunner => "external-runner",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    LlmGenerated,
    Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCode {
    pub script: String,
    pub target: Target,
    pub model: ModelDocument,
    pub origin: Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Syntax,
    MissingSymbol,
    SolverRejection,
    Timeout,
    Crash,
    Schema,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 6] = [
        ErrorClass::Syntax,
        ErrorClass::MissingSymbol,
        ErrorClass::SolverRejection,
        ErrorClass::Timeout,
        ErrorClass::Crash,
        ErrorClass::Schema,
    ];
}

impl fmt::Display for ErrorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("class serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub class: ErrorClass,
    pub message: String,
    pub excerpt: String,
}

impl ErrorReport {
    pub fn new(class: ErrorClass, message: impl Into<String>, excerpt: impl Into<String>) -> ErrorReport {
        ErrorReport {
            class,
            message: message.into(),
            excerpt: excerpt.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub q: bool,
    pub solution: Option<Solution>,
    pub error: Option<ErrorReport>,
    pub wall_ms: f64,
}

impl ExecutionOutcome {
    pub fn success(solution: Solution, wall: Duration) -> ExecutionOutcome {
        ExecutionOutcome {
            q: true,
            solution: Some(solution),
            error: None,
            wall_ms: wall.as_secs_f64() * 1e3,
        }
    }

    pub fn failure(error: ErrorReport, wall: Duration) -> ExecutionOutcome {
        ExecutionOutcome {
            q: false,
            solution: None,
            error: Some(error),
            wall_ms: wall.as_secs_f64() * 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub wall_secs: f64,
    pub memory_bytes: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            wall_secs: 30.0,
            memory_bytes: 512 << 20,
        }
    }
}

impl Limits {
    pub fn wall(&self) -> Duration {
        Duration::from_secs_f64(self.wall_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("generated script does not embed the canonical model document")]
    MissingModel,
}

/// The surrogate document, carrying the original problem and strategy
/// whenever convexification changed anything.
pub fn model_document(original: &StandardForm, cp: Option<&ConvexifiedProblem>) -> ModelDocument {
    let Some(cp) = cp else {
        return ModelDocument::from_standard(original);
    };
    let mut doc = ModelDocument::from_standard(&cp.surrogate);
    let changed = !cp.relaxed_variables.is_empty() || cp.mapping.iter().any(|m| m.change != Change::Unchanged);
    if changed {
        let anchor: BTreeMap<String, f64> = original
            .variables
            .iter()
            .map(|v| v.name.clone())
            .zip(cp.anchor.iter().copied())
            .collect();
        doc.sca = Some(ScaSection {
            original: Box::new(ModelDocument::from_standard(original)),
            strategy: cp.strategy.clone(),
            anchor,
        });
    }
    doc
}

fn solver_id(target: Target) -> SolverId {
    match target {
        Target::Internal => SolverId::Internal,
        Target::ExternalRunner => SolverId::External,
    }
}

/// Deterministic script for a document.
pub fn template_script(model: &ModelDocument, target: Target, options: &SolverOptions) -> GeneratedCode {
    GeneratedCode {
        script: script::render(solver_id(target), options, &[], &model.to_json()),
        target,
        model: model.clone(),
        origin: Origin::Template,
    }
}

/// Substitutes the placeholder and checks the canonical document is embedded.
pub fn embed_model(text: &str, model: &ModelDocument) -> Result<String, GenerateError> {
    let json = model.to_json();
    let script = text.replace(MODEL_PLACEHOLDER, &json);
    if script.contains(&json) {
        Ok(script)
    } else {
        Err(GenerateError::MissingModel)
    }
}

/// Template when no session is given, otherwise the backend's script.
pub fn generate_script(
    model: &ModelDocument,
    target: Target,
    options: &SolverOptions,
    session: Option<&mut Session<'_>>,
) -> Result<GeneratedCode, GenerateError> {
    let Some(session) = session else {
        return Ok(template_script(model, target, options));
    };
    let listing = serde_json::to_string_pretty(model).expect("document serializes");
    let prompt = prompts::render(
        prompts::CODEGEN,
        &[
            ("target", &target.to_string()),
            ("model", &listing),
            ("model_placeholder", MODEL_PLACEHOLDER),
        ],
    );
    let reply = session.ask(Stage::Codegen, &prompt)?;
    let body = fenced_block(&reply).ok_or(GenerateError::MissingModel)?;
    Ok(GeneratedCode {
        script: embed_model(body, model)?,
        target,
        model: model.clone(),
        origin: Origin::LlmGenerated,
    })
}

/// Everything `execute` needs besides the code.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Executor {
    pub limits: Limits,
    pub runner: RunnerConfig,
    pub options: SolverOptions,
}

impl Executor {
    /// Never fails at the API level; every failure is a Q=0 outcome.
    pub fn execute(&self, code: &GeneratedCode) -> ExecutionOutcome {
        self.execute_with_start(code, &[])
    }

    /// As `execute`, with start values that override the script's.
    pub fn execute_with_start(&self, code: &GeneratedCode, start: &[(String, f64)]) -> ExecutionOutcome {
        let t0 = Instant::now();
        let result = match code.target {
            Target::ExternalRunner if self.runner.available() => {
                external::run(&self.runner, code, start, &self.options, &self.limits)
            }
            Target::ExternalRunner => {
                log::warn!("external runner unavailable; executing on the internal solver");
                run_internal(code, start, &self.options, self.limits.wall())
            }
            Target::Internal => run_internal(code, start, &self.options, self.limits.wall()),
        };
        match result {
            Ok(s) => ExecutionOutcome::success(s, t0.elapsed()),
            Err(e) => ExecutionOutcome::failure(e, t0.elapsed()),
        }
    }
}

/// Checks the script against the canonical document and returns the
/// parsed script.
pub(crate) fn check_script(code: &GeneratedCode) -> Result<script::Script, ErrorReport> {
    let s = script::parse(&code.script).map_err(|e| ErrorReport::new(ErrorClass::Syntax, e.to_string(), e.excerpt))?;
    let line = |n: usize| code.script.lines().nth(n.saturating_sub(1)).unwrap_or("").trim().to_string();
    let doc = match &s.model {
        None => return Err(ErrorReport::new(ErrorClass::MissingSymbol, "no model document", "")),
        Some(Model::Placeholder) => {
            return Err(ErrorReport::new(
                ErrorClass::MissingSymbol,
                "model placeholder was never substituted",
                line(s.model_line),
            ))
        }
        Some(Model::Json(text)) => ModelDocument::from_json(text)
            .map_err(|e| ErrorReport::new(ErrorClass::Schema, format!("embedded model: {e}"), excerpt(text)))?,
    };
    if doc != code.model {
        return Err(ErrorReport::new(
            ErrorClass::Schema,
            "embedded model differs from the canonical document",
            excerpt(&line(s.model_line)),
        ));
    }
    for (name, _) in &s.starts {
        if !doc.variables.iter().any(|v| &v.name == name) {
            return Err(ErrorReport::new(
                ErrorClass::MissingSymbol,
                format!("undefined variable `{name}`"),
                format!("start {name}"),
            ));
        }
    }
    Ok(s)
}

pub(crate) fn excerpt(text: &str) -> String {
    const MAX: usize = 160;
    if text.chars().count() <= MAX {
        text.to_string()
    } else {
        text.chars().take(MAX).collect::<String>() + "..."
    }
}

fn rejection(e: SolveError) -> ErrorReport {
    ErrorReport::new(ErrorClass::SolverRejection, e.to_string(), "solve")
}

/// Solves the embedded problem on the internal solver. With an `sca`
/// section the loop runs on the original problem.
fn solve_document(doc: &ModelDocument, starts: &[(String, f64)], options: &SolverOptions) -> Result<Solution, ErrorReport> {
    let schema = |e: crate::model::ModelError| ErrorReport::new(ErrorClass::Schema, e.to_string(), "");
    let start_for = |p: &StandardForm, base: &dyn Fn(usize) -> f64| -> Vec<f64> {
        p.variables
            .iter()
            .enumerate()
            .map(|(i, v)| {
                starts
                    .iter()
                    .rev()
                    .find(|(n, _)| *n == v.name)
                    .map_or_else(|| base(i), |(_, x)| *x)
            })
            .collect()
    };
    let solution = match &doc.sca {
        Some(sca) => {
            let original = sca.original.to_standard().map_err(schema)?;
            let report = analyze_problem(&original);
            let x0 = start_for(&original, &|i| {
                let v = &original.variables[i];
                sca.anchor.get(&v.name).copied().unwrap_or_else(|| box_center(v))
            });
            sca_loop(&original, &report, &sca.strategy, &x0, options).map_err(rejection)?
        }
        None => {
            let p = doc.to_standard().map_err(schema)?;
            let x0 = start_for(&p, &|i| box_center(&p.variables[i]));
            solve_convex(&p, &x0, options).map_err(rejection)?
        }
    };
    if solution.status.has_solution() {
        Ok(solution)
    } else {
        Err(ErrorReport::new(
            ErrorClass::SolverRejection,
            format!("solver finished with status {}", solution.status),
            "solve",
        ))
    }
}

fn run_internal(
    code: &GeneratedCode,
    start: &[(String, f64)],
    base: &SolverOptions,
    wall: Duration,
) -> Result<Solution, ErrorReport> {
    let s = check_script(code)?;
    let options = s.options(*base);
    let mut starts = s.starts.clone();
    starts.extend(start.iter().cloned());
    let doc = code.model.clone();
    let (tx, rx) = mpsc::channel();
    std::thread::Builder::new()
        .name("optira-solve".into())
        .spawn(move || {
            let r = catch_unwind(AssertUnwindSafe(|| solve_document(&doc, &starts, &options)));
            let _ = tx.send(r);
        })
        .map_err(|e| ErrorReport::new(ErrorClass::Crash, format!("cannot start solver thread: {e}"), ""))?;
    match rx.recv_timeout(wall) {
        Ok(Ok(r)) => r,
        Ok(Err(panic)) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "solver panicked".into());
            Err(ErrorReport::new(ErrorClass::Crash, msg, "solve"))
        }
        Err(mpsc::RecvTimeoutError::Timeout) => Err(ErrorReport::new(
            ErrorClass::Timeout,
            format!("no result within {:.3} s", wall.as_secs_f64()),
            "solve",
        )),
        Err(mpsc::RecvTimeoutError::Disconnected) => Err(ErrorReport::new(ErrorClass::Crash, "solver thread vanished", "solve")),
    }
}
