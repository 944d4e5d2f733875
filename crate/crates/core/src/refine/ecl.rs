//! The error-correction loop: repair a failed script, re-execute, repeat.
//!
//! Deterministic rules come first. Schema errors regenerate the template;
//! missing symbols re-emit the model document. Every other class goes to
//! the backend, or to the template when there is no backend.

use serde::{Deserialize, Serialize};

use super::RefineError;
use crate::extraction::prompts;
use crate::llm::{fenced_block, Session, Stage};
use crate::model::ModelDocument;
use crate::sandbox::script::MODEL_PLACEHOLDER;
use crate::sandbox::{
    embed_model, template_script, ErrorClass, ErrorReport, ExecutionOutcome, Executor, GeneratedCode, Origin,
};

pub const DEFAULT_K: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "detail", rename_all = "kebab-case")]
pub enum Repair {
    TemplateRegenerated,
    ModelReemitted,
    Llm,
    /// The backend failed or replied without a usable script; the code
    /// is re-executed unchanged.
    LlmFailed(String),
    /// No backend: the template stands in for a model repair.
    TemplateFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EclStep {
    pub k: u32,
    pub error: ErrorReport,
    pub repair: Repair,
    pub code: GeneratedCode,
    pub q: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EclState {
    pub k: u32,
    pub cap: u32,
    pub history: Vec<EclStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EclResult {
    pub outcome: ExecutionOutcome,
    pub code: GeneratedCode,
    pub state: EclState,
}

/// Canonical document in place of the placeholder or a missing model
/// line, with starts for undeclared variables dropped.
fn reemit_model(code: &GeneratedCode) -> String {
    let doc = &code.model;
    let json = doc.to_json();
    let declared = |name: &str| doc.variables.iter().any(|v| v.name == name);
    let mut has_model = false;
    let mut out = Vec::new();
    let mut in_block = false;
    for line in code.script.lines() {
        let t = line.trim();
        if in_block {
            in_block = t != "model end";
            continue;
        }
        let mut words = t.split_whitespace();
        match (words.next(), words.next()) {
            (Some("start"), Some(name)) if !declared(name) => continue,
            (Some("model"), Some("begin")) => {
                in_block = true;
                has_model = true;
                out.push(format!("model {json}"));
            }
            (Some("model"), _) => {
                has_model = true;
                out.push(format!("model {json}"));
            }
            (Some("solve"), None) if !has_model => {
                has_model = true;
                out.push(format!("model {json}"));
                out.push(line.to_string());
            }
            _ => out.push(line.to_string()),
        }
    }
    out.join("\n") + "\n"
}

fn llm_repair(
    code: &GeneratedCode,
    error: &ErrorReport,
    session: &mut Session<'_>,
) -> Result<GeneratedCode, String> {
    let json = code.model.to_json();
    let shown = code.script.replace(&json, MODEL_PLACEHOLDER);
    let prompt = prompts::render(
        prompts::REPAIR,
        &[
            ("class", &error.class.to_string()),
            ("message", &error.message),
            ("excerpt", &error.excerpt),
            ("model_placeholder", MODEL_PLACEHOLDER),
            ("script", &shown),
        ],
    );
    let reply = session.ask(Stage::Repair, &prompt).map_err(|e| e.to_string())?;
    let body = fenced_block(&reply).ok_or("reply holds no script")?;
    let script = embed_model(body, &code.model).map_err(|e| e.to_string())?;
    Ok(GeneratedCode {
        script,
        origin: Origin::LlmGenerated,
        ..code.clone()
    })
}

fn repair(
    code: &GeneratedCode,
    error: &ErrorReport,
    executor: &Executor,
    session: Option<&mut Session<'_>>,
) -> (Repair, GeneratedCode) {
    let template = |m: &ModelDocument| template_script(m, code.target, &executor.options);
    match (error.class, session) {
        (ErrorClass::Schema, _) => (Repair::TemplateRegenerated, template(&code.model)),
        (ErrorClass::MissingSymbol, _) => (
            Repair::ModelReemitted,
            GeneratedCode {
                script: reemit_model(code),
                ..code.clone()
            },
        ),
        (_, Some(session)) => match llm_repair(code, error, session) {
            Ok(c) => (Repair::Llm, c),
            Err(e) => (Repair::LlmFailed(e), code.clone()),
        },
        (_, None) => (Repair::TemplateFallback, template(&code.model)),
    }
}

/// Repairs and re-executes until success or `cap` iterations.
pub fn run_ecl(
    outcome: ExecutionOutcome,
    code: GeneratedCode,
    executor: &Executor,
    mut session: Option<&mut Session<'_>>,
    cap: u32,
) -> Result<EclResult, RefineError> {
    if outcome.q {
        return Err(RefineError::AlreadySucceeded);
    }
    let mut state = EclState {
        k: 0,
        cap,
        history: Vec::new(),
    };
    let (mut outcome, mut code) = (outcome, code);
    while !outcome.q && state.k < cap {
        state.k += 1;
        let error = outcome.error.clone().expect("a failed outcome carries a report");
        let (rule, next) = repair(&code, &error, executor, session.as_deref_mut());
        log::debug!("ecl k={} class={} repair={rule:?}", state.k, error.class);
        outcome = executor.execute(&next);
        code = next;
        state.history.push(EclStep {
            k: state.k,
            error,
            repair: rule,
            code: code.clone(),
            q: outcome.q,
        });
    }
    Ok(EclResult { outcome, code, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockScript};
    use crate::model::{parse_expression, Constraint, StandardForm, Variable};
    use crate::sandbox::{model_document, Target};
    use crate::solver::SolverOptions;

    fn code() -> GeneratedCode {
        let v = vec![Variable::free("x")];
        let p = StandardForm {
            objective: parse_expression("x^2", &v).unwrap(),
            inequalities: vec![Constraint::le(parse_expression("1 - x", &v).unwrap())],
            equalities: vec![],
            variables: v,
            metadata: Default::default(),
        };
        template_script(&model_document(&p, None), Target::Internal, &SolverOptions::default())
    }

    fn broken() -> GeneratedCode {
        GeneratedCode {
            script: code().script.replace("solve", "solve now"),
            origin: Origin::LlmGenerated,
            ..code()
        }
    }

    fn mock(replies: &[&str]) -> MockBackend {
        let toml: String = replies
            .iter()
            .map(|r| format!("[[response]]\nstage = \"repair\"\ntext = '''\n```\n{r}\n```\n'''\n"))
            .collect();
        MockBackend::new(MockScript::parse(&toml).unwrap())
    }

    const BAD: &str = "model {{model}}\nsolve now";
    const GOOD: &str = "solver internal\nmodel {{model}}\nsolve";

    #[test]
    fn scripted_repair_on_second_iteration() {
        let m = mock(&[BAD, GOOD]);
        let mut s = Session::new(&m, "p");
        let e = Executor::default();
        let first = e.execute(&broken());
        let r = run_ecl(first, broken(), &e, Some(&mut s), DEFAULT_K).unwrap();
        assert!(r.outcome.q);
        assert_eq!(r.state.k, 2);
        assert_eq!(r.state.history.len(), 2);
        assert_eq!(r.state.history[0].repair, Repair::Llm);
        assert!(!r.state.history[0].q && r.state.history[1].q);
        let prompt = &s.exchanges[0].prompt;
        assert!(prompt.contains("class: syntax"));
        assert!(prompt.contains("solve now"));
        assert!(!prompt.contains(&code().model.to_json()));
    }

    #[test]
    fn never_repairing_stops_at_cap() {
        let m = mock(&[BAD; 4]);
        let mut s = Session::new(&m, "p");
        let e = Executor::default();
        let r = run_ecl(e.execute(&broken()), broken(), &e, Some(&mut s), DEFAULT_K).unwrap();
        assert!(!r.outcome.q);
        assert_eq!((r.state.k, r.state.history.len()), (4, 4));
    }

    #[test]
    fn success_is_a_precondition_error() {
        let e = Executor::default();
        let ok = e.execute(&code());
        assert_eq!(run_ecl(ok, code(), &e, None, DEFAULT_K), Err(RefineError::AlreadySucceeded));
    }

    #[test]
    fn schema_regenerates_the_template() {
        let e = Executor::default();
        let bad = GeneratedCode {
            script: code().script.replace("x^2", "x^4"),
            ..code()
        };
        let r = run_ecl(e.execute(&bad), bad, &e, None, DEFAULT_K).unwrap();
        assert!(r.outcome.q);
        assert_eq!(r.state.history[0].repair, Repair::TemplateRegenerated);
        assert_eq!(r.code.origin, Origin::Template);
    }

    #[test]
    fn missing_symbol_reemits_the_model() {
        let e = Executor::default();
        for script in ["solver internal\nstart y 2\nstart x 3\nmodel {{model}}\nsolve\n", "start x 3\nsolve\n"] {
            let bad = GeneratedCode {
                script: script.into(),
                ..broken()
            };
            let first = e.execute(&bad);
            assert_eq!(first.error.as_ref().unwrap().class, ErrorClass::MissingSymbol);
            let r = run_ecl(first, bad, &e, None, DEFAULT_K).unwrap();
            assert!(r.outcome.q, "{script}");
            assert_eq!(r.state.k, 1);
            assert_eq!(r.state.history[0].repair, Repair::ModelReemitted);
            assert!(r.code.script.contains("start x 3"));
            assert!(crate::sandbox::script::parse(&r.code.script).is_ok());
        }
    }

    #[test]
    fn backend_failure_is_recorded() {
        let m = MockBackend::new(MockScript::parse("").unwrap());
        let mut s = Session::new(&m, "p");
        let e = Executor::default();
        let r = run_ecl(e.execute(&broken()), broken(), &e, Some(&mut s), 2).unwrap();
        assert!(!r.outcome.q);
        assert_eq!(r.state.k, 2);
        assert!(matches!(r.state.history[0].repair, Repair::LlmFailed(_)));
    }

    #[test]
    fn without_backend_the_template_stands_in() {
        let e = Executor::default();
        let r = run_ecl(e.execute(&broken()), broken(), &e, None, DEFAULT_K).unwrap();
        assert!(r.outcome.q);
        assert_eq!(r.state.history[0].repair, Repair::TemplateFallback);
    }
}
