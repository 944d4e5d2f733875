//! One run from problem text to a validated solution.
//!
//! extract → build → consistency (rebuilt at most twice) → analyze →
//! convexify → codegen → execute → error correction → validate →
//! feasibility-domain correction. Every step lands in the run record.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::convexify::{box_center, convexify, select_strategy, ConvexifiedProblem, Strategy};
use crate::curvature::{analyze_problem, ConvexityReport};
use crate::extraction::{
    build_model, extract_sets, tighten_bounds, validate_consistency, ConsistencyReport, ExtractionError,
};
use crate::llm::{Backend, Exchange, Session};
use crate::model::{ModelDocument, StandardForm};
use crate::refine::{
    run_ecl, run_fdc, validate_feasibility, EclStep, FdcConfig, FdcDriver, FdcStep, FeasibilityResult, DEFAULT_EPSILON,
    DEFAULT_K,
};
use crate::sandbox::{
    generate_script, model_document, template_script, ErrorClass, ExecutionOutcome, Executor, GeneratedCode, Limits,
    Origin, RunnerConfig, Target,
};
use crate::solver::{Solution, SolverOptions, Status};

/// Consistency failures trigger at most this many rebuilds.
pub const REBUILD_CAP: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub o_convex: bool,
    pub o_ecl: bool,
    pub o_fdc: bool,
}

impl Ablation {
    pub const NAMES: [&'static str; 3] = ["o-convex", "o-ecl", "o-fdc"];

    pub fn set(&mut self, name: &str) -> Result<(), String> {
        match name {
            "o-convex" => self.o_convex = true,
            "o-ecl" => self.o_ecl = true,
            "o-fdc" => self.o_fdc = true,
            other => return Err(format!("unknown ablation `{other}`; expected one of {}", Ablation::NAMES.join(", "))),
        }
        Ok(())
    }
}

impl fmt::Display for Ablation {
    /// `full`, or the omitted components joined by `+`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = [self.o_convex, self.o_ecl, self.o_fdc]
            .iter()
            .zip(Ablation::NAMES)
            .filter_map(|(b, n)| b.then_some(n))
            .collect();
        if on.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&on.join("+"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub k: u32,
    pub fdc: FdcConfig,
    pub epsilon: f64,
    pub ablation: Ablation,
    pub target: Target,
    pub limits: Limits,
    pub runner: RunnerConfig,
    pub solver: SolverOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: DEFAULT_K,
            fdc: FdcConfig::default(),
            epsilon: DEFAULT_EPSILON,
            ablation: Ablation::default(),
            target: Target::Internal,
            limits: Limits::default(),
            runner: RunnerConfig::default(),
            solver: SolverOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=20).contains(&self.k) {
            return Err(format!("K = {} is outside 1..=20", self.k));
        }
        if !(1..=20).contains(&self.fdc.cap) {
            return Err(format!("L = {} is outside 1..=20", self.fdc.cap));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(format!("epsilon = {} must be positive", self.epsilon));
        }
        if !(self.fdc.gamma > 0.0 && self.fdc.gamma.is_finite()) {
            return Err(format!("gamma = {} must be positive", self.fdc.gamma));
        }
        if !(self.limits.wall_secs > 0.0 && self.limits.wall_secs.is_finite()) || self.limits.memory_bytes == 0 {
            return Err("limits must be positive".into());
        }
        self.solver.validate().map_err(|e| e.to_string())
    }

    fn executor(&self) -> Executor {
        Executor {
            limits: self.limits,
            runner: self.runner.clone(),
            options: self.solver,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    Extract,
    Model,
    Consistency,
    Analyze,
    Convexify,
    Codegen,
    Execute,
    Ecl,
    Validate,
    Fdc,
}

/// Why a run ended without a feasible solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Empty or unusable problem input.
    Input,
    /// The backend failed or replied outside its schema.
    Backend,
    /// Consistency validation still failed after the rebuilds.
    Inconsistent,
    /// No script executed successfully.
    Execution,
    /// Solutions were produced but none passed validation.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub step: Step,
    pub kind: FailureKind,
    pub message: String,
}

/// One entry of the error-correction history, without the code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EclEntry {
    pub k: u32,
    pub class: ErrorClass,
    pub message: String,
    pub repair: crate::refine::Repair,
    pub q: bool,
}

impl From<&EclStep> for EclEntry {
    fn from(s: &EclStep) -> Self {
        EclEntry {
            k: s.k,
            class: s.error.class,
            message: s.error.message.clone(),
            repair: s.repair.clone(),
            q: s.q,
        }
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub problem_id: String,
    pub q: bool,
    pub v: bool,
    /// Absent when the run started from a model.
    pub t: Option<bool>,
    pub rebuilds: u32,
    pub consistency: Option<ConsistencyReport>,
    pub model: Option<ModelDocument>,
    pub convex: Option<bool>,
    pub strategy: Option<Strategy>,
    pub code: Option<GeneratedCode>,
    pub codegen_fallback: Option<String>,
    pub ecl: Vec<EclEntry>,
    pub ecl_iterations: u32,
    pub fdc: Vec<FdcStep>,
    pub fdc_iterations: u32,
    pub solution: Option<Solution>,
    /// Values by variable name of the returned solution.
    pub point: Option<BTreeMap<String, f64>>,
    pub feasibility: Option<FeasibilityResult>,
    pub failure: Option<Failure>,
    /// Milliseconds per step.
    pub timings: BTreeMap<Step, f64>,
    pub exchanges: Vec<Exchange>,
}

impl PipelineRun {
    fn new(problem_id: &str) -> PipelineRun {
        PipelineRun {
            problem_id: problem_id.to_string(),
            q: false,
            v: false,
            t: None,
            rebuilds: 0,
            consistency: None,
            model: None,
            convex: None,
            strategy: None,
            code: None,
            codegen_fallback: None,
            ecl: Vec::new(),
            ecl_iterations: 0,
            fdc: Vec::new(),
            fdc_iterations: 0,
            solution: None,
            point: None,
            feasibility: None,
            failure: None,
            timings: BTreeMap::new(),
            exchanges: Vec::new(),
        }
    }

    fn fail(&mut self, step: Step, kind: FailureKind, message: impl Into<String>) {
        self.failure = Some(Failure {
            step,
            kind,
            message: message.into(),
        });
    }

    fn timed<T>(&mut self, step: Step, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.timings.entry(step).or_default() += t0.elapsed().as_secs_f64() * 1e3;
        out
    }
}

fn extraction_failure(e: &ExtractionError) -> FailureKind {
    match e {
        ExtractionError::EmptyInput => FailureKind::Input,
        _ => FailureKind::Backend,
    }
}

fn start_point(p: &StandardForm) -> Vec<f64> {
    p.variables.iter().map(box_center).collect()
}

/// Runs the pipeline on problem text. Never fails: every failure is
/// recorded in the returned run.
pub fn run_text(problem_id: &str, text: &str, backend: &dyn Backend, config: &PipelineConfig) -> PipelineRun {
    let mut run = PipelineRun::new(problem_id);
    let mut session = Session::new(backend, problem_id);
    let model = front_end(&mut run, text, &mut session);
    if let Some(model) = model {
        back_end(&mut run, &model, Some(&mut session), config);
    }
    run.exchanges = session.exchanges;
    run
}

/// Runs from an already built model, skipping extraction and
/// consistency. Without a backend, code comes from the template and
/// repairs fall back to it.
pub fn run_model(model: &StandardForm, backend: Option<&dyn Backend>, config: &PipelineConfig) -> PipelineRun {
    let id = model.metadata.problem_id.clone();
    let mut run = PipelineRun::new(&id);
    let mut model = model.clone();
    tighten_bounds(&mut model);
    match backend {
        Some(b) => {
            let mut session = Session::new(b, id);
            back_end(&mut run, &model, Some(&mut session), config);
            run.exchanges = session.exchanges;
        }
        None => back_end(&mut run, &model, None, config),
    }
    run
}

/// Extraction, model construction and consistency validation with
/// rebuilds. `None` when the run ends here.
fn front_end(run: &mut PipelineRun, text: &str, session: &mut Session<'_>) -> Option<StandardForm> {
    let sets = match run.timed(Step::Extract, || extract_sets(text, session)) {
        Ok(s) => s,
        Err(e) => {
            run.fail(Step::Extract, extraction_failure(&e), e.to_string());
            return None;
        }
    };
    loop {
        let model = match run.timed(Step::Model, || build_model(&sets, text, session)) {
            Ok(m) => m,
            Err(e) => {
                run.fail(Step::Model, extraction_failure(&e), e.to_string());
                return None;
            }
        };
        run.model = Some(ModelDocument::from_standard(&model));
        let report = match run.timed(Step::Consistency, || validate_consistency(&model, &sets, text, session)) {
            Ok(r) => r,
            Err(e) => {
                run.fail(Step::Consistency, extraction_failure(&e), e.to_string());
                return None;
            }
        };
        let t = report.t();
        run.t = Some(t);
        run.consistency = Some(report);
        if t {
            return Some(model);
        }
        if run.rebuilds == REBUILD_CAP {
            let why = run
                .consistency
                .as_ref()
                .map(|r| {
                    let failed: Vec<&str> = [("xi1", r.xi1), ("xi2", r.xi2), ("xi3", r.xi3), ("xi4", r.xi4)]
                        .into_iter()
                        .filter_map(|(n, ok)| (!ok).then_some(n))
                        .collect();
                    failed.join(", ")
                })
                .unwrap_or_default();
            run.fail(
                Step::Consistency,
                FailureKind::Inconsistent,
                format!("consistency failed after {REBUILD_CAP} rebuilds ({why})"),
            );
            return None;
        }
        run.rebuilds += 1;
    }
}

/// The convexified problem for `strategy`, or `None` when the original
/// is used as it is.
fn convexified(
    original: &StandardForm,
    report: &ConvexityReport,
    strategy: &Strategy,
    x0: &[f64],
) -> Result<ConvexifiedProblem, String> {
    convexify(original, report, strategy, x0).map_err(|e| e.to_string())
}

fn generate(
    run: &mut PipelineRun,
    doc: &ModelDocument,
    session: Option<&mut Session<'_>>,
    config: &PipelineConfig,
) -> GeneratedCode {
    let has_backend = session.is_some();
    let result = run.timed(Step::Codegen, || generate_script(doc, config.target, &config.solver, session));
    match result {
        Ok(code) => code,
        Err(e) => {
            debug_assert!(has_backend);
            log::warn!("{}: code generation failed ({e}); using the template", run.problem_id);
            run.codegen_fallback = Some(e.to_string());
            template_script(doc, config.target, &config.solver)
        }
    }
}

/// Execution followed by error correction unless ablated.
fn execute_with_repair(
    run: &mut PipelineRun,
    code: GeneratedCode,
    session: Option<&mut Session<'_>>,
    config: &PipelineConfig,
) -> (ExecutionOutcome, GeneratedCode) {
    let executor = config.executor();
    let outcome = run.timed(Step::Execute, || executor.execute(&code));
    if outcome.q || config.ablation.o_ecl {
        return (outcome, code);
    }
    let result = run.timed(Step::Ecl, || run_ecl(outcome, code, &executor, session, config.k));
    let r = result.expect("outcome failed, so the loop's precondition holds");
    run.ecl.extend(r.state.history.iter().map(EclEntry::from));
    run.ecl_iterations += r.state.k;
    (r.outcome, r.code)
}

struct Driver<'r, 's, 'b> {
    run: &'r mut PipelineRun,
    original: &'r StandardForm,
    report: &'r ConvexityReport,
    code: GeneratedCode,
    session: Option<&'s mut Session<'b>>,
    config: &'r PipelineConfig,
}

impl FdcDriver for Driver<'_, '_, '_> {
    fn resolve(&mut self, x0: &[f64]) -> Result<Solution, String> {
        let start: Vec<(String, f64)> = self.original.names().into_iter().zip(x0.iter().copied()).collect();
        let out = self.config.executor().execute_with_start(&self.code, &start);
        out.solution.ok_or_else(|| out.error.map(|e| e.message).unwrap_or_default())
    }

    fn reanalyze(&mut self, strategy: &Strategy, x0: &[f64]) -> Result<Solution, String> {
        let doc = if self.config.ablation.o_convex {
            model_document(self.original, None)
        } else {
            let cp = convexified(self.original, self.report, strategy, x0)?;
            model_document(self.original, Some(&cp))
        };
        let code = generate(self.run, &doc, self.session.as_deref_mut(), self.config);
        let (out, code) = execute_with_repair(self.run, code, self.session.as_deref_mut(), self.config);
        self.code = code;
        out.solution.ok_or_else(|| out.error.map(|e| e.message).unwrap_or_default())
    }
}

/// Analysis through feasibility correction.
fn back_end(run: &mut PipelineRun, original: &StandardForm, mut session: Option<&mut Session<'_>>, config: &PipelineConfig) {
    if run.model.is_none() {
        run.model = Some(ModelDocument::from_standard(original));
    }
    let report = run.timed(Step::Analyze, || analyze_problem(original));
    run.convex = Some(report.problem_convex);
    let x0 = start_point(original);
    let needs_convexify = !report.problem_convex || report.has_discrete_offender();
    let doc = if config.ablation.o_convex || !needs_convexify {
        model_document(original, None)
    } else {
        let strategy = select_strategy(&report, 0);
        run.strategy = Some(strategy.clone());
        match run.timed(Step::Convexify, || convexified(original, &report, &strategy, &x0)) {
            Ok(cp) => model_document(original, Some(&cp)),
            Err(e) => {
                log::warn!("{}: convexification failed ({e}); keeping the original", run.problem_id);
                model_document(original, None)
            }
        }
    };
    let code = generate(run, &doc, session.as_deref_mut(), config);
    let (outcome, code) = execute_with_repair(run, code, session.as_deref_mut(), config);
    run.q = outcome.q;
    run.code = Some(code.clone());
    let Some(first) = outcome.solution else {
        let message = outcome.error.map(|e| format!("{}: {}", e.class, e.message)).unwrap_or_default();
        run.fail(Step::Execute, FailureKind::Execution, message);
        return;
    };
    let check = run.timed(Step::Validate, || validate_feasibility(original, &first.x_star, config.epsilon));
    if check.v {
        accept(run, original, first, check);
        return;
    }
    if config.ablation.o_fdc {
        reject(run, first, check);
        return;
    }
    let t0 = Instant::now();
    let mut driver = Driver {
        run,
        original,
        report: &report,
        code,
        session,
        config,
    };
    let result = run_fdc(original, &report, &first, &x0, &config.fdc, config.epsilon, &mut driver)
        .expect("the first solution failed validation");
    let run = driver.run;
    *run.timings.entry(Step::Fdc).or_default() += t0.elapsed().as_secs_f64() * 1e3;
    run.fdc = result.state.history.clone();
    run.fdc_iterations = result.state.l;
    match (result.solution, result.feasibility) {
        (Some(s), Some(f)) if f.v => accept(run, original, s, f),
        (_, f) => reject(run, first, f.unwrap_or(check)),
    }
}

fn accept(run: &mut PipelineRun, original: &StandardForm, s: Solution, f: FeasibilityResult) {
    debug_assert!(f.v);
    run.v = true;
    run.point = Some(s.point(original));
    run.solution = Some(s);
    run.feasibility = Some(f);
}

fn reject(run: &mut PipelineRun, s: Solution, f: FeasibilityResult) {
    let message = match f.worst() {
        Some(r) => format!("{} violated by {:e}", r.id, r.value),
        None => f.reason.clone().unwrap_or_else(|| "solution failed validation".into()),
    };
    run.fail(Step::Validate, FailureKind::Infeasible, message);
    run.solution = Some(s);
    run.feasibility = Some(f);
}

impl PipelineRun {
    /// The code actually executed last came from a template.
    pub fn used_template(&self) -> bool {
        self.code.as_ref().is_some_and(|c| c.origin == Origin::Template)
    }

    pub fn status(&self) -> Option<Status> {
        self.solution.as_ref().map(|s| s.status)
    }
}
