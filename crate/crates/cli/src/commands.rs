use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use optira::bench::{emit_report, load_corpus, run_benchmark, BenchError};
use optira::config::Config;
use optira::convexify::{box_center, convexify, select_strategy, Change, ConvexifiedProblem};
use optira::curvature::{analyze_problem, ConvexityReport};
use optira::extraction::{build_model, extract_sets, tighten_bounds, ExtractionError};
use optira::llm::{Backend, BackendKind, Session};
use optira::model::{ModelDocument, StandardForm};
use optira::pipeline::{run_model, run_text, PipelineRun};

use crate::args::{problem_id, InspectStage};
use crate::exit::{Failure, Outcome};

pub enum Problem {
    Text { id: String, text: String },
    Model(StandardForm),
}

/// Files ending in `.json` are model documents; anything else is text.
pub fn load_problem(path: &Path, id: &Option<String>) -> Result<Problem, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let doc = ModelDocument::from_json(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let mut model = doc.to_standard().map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        if let Some(id) = id {
            model.metadata.problem_id = id.clone();
        } else if model.metadata.problem_id.is_empty() {
            model.metadata.problem_id = problem_id(&None, Some(path));
        }
        return Ok(Problem::Model(model));
    }
    if text.trim().is_empty() {
        return Err(Failure::input(format!("{} is empty", path.display())));
    }
    Ok(Problem::Text {
        id: problem_id(id, Some(path)),
        text,
    })
}

/// The configured backend. Without `required`, an unscripted mock is
/// no backend at all and the pipeline falls back to templates.
fn backend(config: &Config, required: bool) -> Result<Option<Arc<dyn Backend>>, Failure> {
    if !required && config.backend.kind == BackendKind::Mock && config.backend.mock_script.is_none() {
        return Ok(None);
    }
    config.backend.build().map(Some).map_err(Failure::backend)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::internal(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::internal(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn flag(b: bool) -> u8 {
    b.into()
}

pub fn summary(run: &PipelineRun) -> String {
    let mut s = format!("problem {}\n", run.problem_id);
    if let Some(t) = run.t {
        let _ = writeln!(s, "consistency  T={} after {} rebuilds", flag(t), run.rebuilds);
    }
    if let Some(c) = run.convex {
        let _ = writeln!(s, "convex       {}", if c { "yes" } else { "no" });
    }
    if let Some(st) = &run.strategy {
        let _ = writeln!(s, "strategy     {st}");
    }
    let _ = writeln!(s, "execution    Q={} with {} ECL iterations", flag(run.q), run.ecl_iterations);
    let _ = writeln!(s, "feasibility  V={} with {} FDC iterations", flag(run.v), run.fdc_iterations);
    if let (Some(sol), Some(point)) = (&run.solution, &run.point) {
        let _ = writeln!(s, "status       {}", sol.status);
        let _ = writeln!(s, "objective    {}", sol.objective);
        for (name, v) in point {
            let _ = writeln!(s, "  {name} = {v}");
        }
    }
    if let Some(f) = &run.failure {
        let _ = writeln!(s, "failure      {:?} at {:?}: {}", f.kind, f.step, f.message);
    }
    s
}

fn outcome_of(run: &PipelineRun) -> Outcome {
    match (&run.failure, run.v) {
        (_, true) => Outcome::Success,
        (Some(f), false) => f.kind.into(),
        (None, false) => Outcome::Infeasible,
    }
}

pub fn solve(problem: Problem, config: &Config, out_dir: &Path) -> Result<Outcome, Failure> {
    let run = match &problem {
        Problem::Text { id, text } => {
            let b = backend(config, true)?.expect("required");
            run_text(id, text, b.as_ref(), &config.pipeline)
        }
        Problem::Model(m) => {
            let b = backend(config, false)?;
            run_model(m, b.as_deref(), &config.pipeline)
        }
    };
    write(out_dir, "run.json", &pretty(&run))?;
    if let Some(m) = &run.model {
        write(out_dir, "model.json", &m.to_json_pretty())?;
    }
    if let Some(sol) = &run.solution {
        let doc = serde_json::json!({
            "solution": sol,
            "point": run.point,
            "feasibility": run.feasibility,
        });
        write(out_dir, "solution.json", &pretty(&doc))?;
    }
    let text = summary(&run);
    write(out_dir, "summary.txt", &text)?;
    print!("{text}");
    Ok(outcome_of(&run))
}

fn bench_failure(e: BenchError) -> Failure {
    match e {
        BenchError::InvalidConfig(_) | BenchError::EmptyCorpus => Failure::input(e),
        _ => Failure::internal(e),
    }
}

pub fn bench(corpus: &Path, config: &Config, out_dir: &Path) -> Result<Outcome, Failure> {
    let problems = load_corpus(corpus).map_err(Failure::input)?;
    let b = backend(config, true)?.expect("required");
    fs::create_dir_all(out_dir).map_err(|e| Failure::internal(format!("cannot create {}: {e}", out_dir.display())))?;
    let out = run_benchmark(&problems, b.as_ref(), &config.pipeline, &config.bench, &out_dir.join("records.jsonl"))
        .map_err(bench_failure)?;
    let report = emit_report(&out.records, &out.metrics).map_err(bench_failure)?;
    write(out_dir, "report.txt", &report.text)?;
    write(out_dir, "report.json", &pretty(&report.json))?;
    print!("{}", report.text);
    Ok(Outcome::Success)
}

/// The model as the back end would receive it.
fn model_for(problem: Problem, config: &Config) -> Result<StandardForm, Failure> {
    let mut model = match problem {
        Problem::Model(m) => m,
        Problem::Text { id, text } => {
            let b = backend(config, true)?.expect("required");
            let mut session = Session::new(b.as_ref(), id);
            let failure = |e: ExtractionError| match e {
                ExtractionError::EmptyInput => Failure::input(e),
                e => Failure::backend(e),
            };
            let sets = extract_sets(&text, &mut session).map_err(failure)?;
            build_model(&sets, &text, &mut session).map_err(failure)?
        }
    };
    tighten_bounds(&mut model);
    Ok(model)
}

pub fn curvature_listing(report: &ConvexityReport) -> String {
    let mut s = String::new();
    for l in &report.labels {
        let sampled = if l.sampled { " (sampled, not proven)" } else { "" };
        let _ = writeln!(s, "{}: {}{sampled}", l.location, l.curvature);
        for o in report.offenders_at(&l.location) {
            let _ = writeln!(s, "  offender {}: {}", o.expr, o.reason);
        }
    }
    for o in report.offenders.iter().filter(|o| !report.labels.iter().any(|l| l.location == o.location)) {
        let _ = writeln!(s, "{}: {}", o.location, o.reason);
    }
    let _ = writeln!(
        s,
        "problem {}, {} offenders",
        if report.problem_convex { "convex" } else { "non-convex" },
        report.offenders.len()
    );
    s
}

fn change(c: &Change) -> String {
    match c {
        Change::Unchanged => "unchanged".into(),
        Change::Linearized { terms } => format!("{terms} terms linearized"),
        Change::Relaxed { multiplier } => format!("relaxed into the objective with multiplier {multiplier}"),
    }
}

pub fn convexify_listing(original: &StandardForm, cp: &ConvexifiedProblem) -> String {
    let mut s = format!("strategy {}\n", cp.strategy);
    let anchor: Vec<String> = original
        .variables
        .iter()
        .zip(&cp.anchor)
        .map(|(v, a)| format!("{}={a}", v.name))
        .collect();
    let _ = writeln!(s, "anchor {}", anchor.join(" "));
    if !cp.relaxed_variables.is_empty() {
        let _ = writeln!(s, "relaxed to continuous: {}", cp.relaxed_variables.join(" "));
    }
    let component = |p: &StandardForm, loc: &optira::curvature::Location| -> String {
        use optira::curvature::Location;
        match loc {
            Location::Objective => p.objective.to_string(),
            Location::Inequality(i) => format!("{} <= 0", p.inequalities[*i].lhs),
            Location::Equality(j) => format!("{} == 0", p.equalities[*j].lhs),
            Location::Variable(v) => format!("variable {v}"),
        }
    };
    for m in &cp.mapping {
        let _ = writeln!(s, "{} ({})", m.original, change(&m.change));
        let _ = writeln!(s, "  original   {}", component(original, &m.original));
        match &m.surrogate {
            Some(loc) => {
                let _ = writeln!(s, "  surrogate  {}", component(&cp.surrogate, loc));
            }
            None => {
                let _ = writeln!(s, "  surrogate  (moved into the objective)");
            }
        }
    }
    s
}

pub fn inspect(stage: InspectStage, problem: Problem, config: &Config) -> Result<Outcome, Failure> {
    let model = model_for(problem, config)?;
    let out = match stage {
        InspectStage::Model => model.to_string(),
        InspectStage::Curvature => curvature_listing(&analyze_problem(&model)),
        InspectStage::Convexify => {
            let report = analyze_problem(&model);
            if report.problem_convex {
                format!("problem convex, 0 offenders; solved as written\n{model}")
            } else {
                let strategy = select_strategy(&report, 0);
                let x0: Vec<f64> = model.variables.iter().map(box_center).collect();
                let cp = convexify(&model, &report, &strategy, &x0)
                    .map_err(|e| Failure::new(Outcome::Execution, format!("convexification failed: {e}")))?;
                convexify_listing(&model, &cp)
            }
        }
    };
    print!("{out}");
    Ok(Outcome::Success)
}
