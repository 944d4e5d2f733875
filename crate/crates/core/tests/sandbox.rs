mod common;

use optira::model::ModelDocument;
use optira::sandbox::{model_document, template_script, ErrorClass, ExecutionOutcome, Executor, GeneratedCode, Limits, RunnerConfig, Target};
use optira::solver::SolverOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use common::*;

fn document() -> ModelDocument {
    model_document(&model_fixture("log_rate"), None)
}

/// One random edit of a working script.
fn mutate(script: &str, rng: &mut ChaCha8Rng) -> String {
    let mut lines: Vec<String> = script.lines().map(str::to_string).collect();
    let solve = lines.iter().rposition(|l| l.trim() == "solve").unwrap_or(lines.len());
    let at = rng.random_range(0..=lines.len());
    match rng.random_range(0..10) {
        0 => {}
        1 => {
            lines.remove(rng.random_range(0..lines.len()));
        }
        2 => lines.insert(at, "frobnicate 3".into()),
        3 => lines.insert(solve, "start q 1".into()),
        4 => lines.insert(solve, format!("start p {}", rng.random_range(-5.0..15.0))),
        5 => {
            if let Some(l) = lines.iter_mut().find(|l| l.starts_with("model")) {
                *l = "model {{model}}".into();
            }
        }
        6 => {
            let (k, v) = [("max_inner", "1"), ("max_outer", "2"), ("tolerance", "1e-3"), ("damping", "0.5")][rng.random_range(0..4)];
            lines.insert(1, format!("set {k} {v}"));
        }
        7 => {
            if let Some(l) = lines.iter_mut().find(|l| l.starts_with("model")) {
                let i = rng.random_range(6..l.len());
                l.replace_range(i..=i, "#");
            }
        }
        8 => lines.insert(at, "set tolerance -1".into()),
        _ => lines.truncate(solve),
    }
    lines.join("\n") + "\n"
}

/// The partition: Q=1 carries exactly a schema-valid solution, Q=0 exactly
/// one classified error.
fn check_partition(out: &ExecutionOutcome, doc: &ModelDocument) {
    match (out.q, &out.solution, &out.error) {
        (true, Some(s), None) => {
            assert_eq!(s.x_star.len(), doc.variables.len());
            assert!(s.x_star.iter().all(|v| v.is_finite()) && s.objective.is_finite());
            assert!(s.status.has_solution());
        }
        (false, None, Some(e)) => assert!(ErrorClass::ALL.contains(&e.class)),
        other => panic!("outcome outside the partition: {other:?}"),
    }
}

#[test]
fn internal_outcomes_partition() {
    let doc = document();
    let base = template_script(&doc, Target::Internal, &SolverOptions::default());
    let exec = Executor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5a4d);
    let (mut good, mut bad) = (0, 0);
    for _ in 0..100 {
        let code = GeneratedCode {
            script: mutate(&base.script, &mut rng),
            ..base.clone()
        };
        let out = exec.execute(&code);
        check_partition(&out, &doc);
        if out.q {
            good += 1;
            let s = out.solution.unwrap();
            let f = -(1.0 + s.x_star[0]).ln();
            assert!(close(s.objective, f, 1e-9), "objective {} at {:?}", s.objective, s.x_star);
        } else {
            bad += 1;
        }
    }
    assert!(good > 0 && bad > 0, "mutations should produce both outcomes: {good} {bad}");
}

/// Replies a fake runner may print, paired with whether a conforming
/// runner for a one-variable model would have produced them.
const REPLIES: [(&str, bool); 11] = [
    (r#"{"status":"optimal","x_star":[10.0],"objective":-2.3978952727983707}"#, true),
    (r#"{"status":"optimal","x_star":[10.0],"objective":-2.39,"kkt":null,"error":null}"#, true),
    (r#"{"status":"optimal","x_star":[10.0]}"#, false),
    (r#"{"status":"optimal","x_star":[10.0, 1.0],"objective":-2.39}"#, false),
    (r#"{"status":"optimal","x_star":[null],"objective":-2.39}"#, false),
    (r#"{"status":"optimal","x_star":[10.0],"objective":"NaN"}"#, false),
    (r#"{"status":"optimal","x_star":[10.0],"objective":-2.39,"extra":1}"#, false),
    (r#"{"status":"infeasible"}"#, false),
    (r#"{"status":"error","error":"model rejected"}"#, false),
    ("not json at all", false),
    ("", false),
];

/// Schema check written independently of the engine's reply types.
fn conforming(reply: &str, n: usize) -> bool {
    let Ok(Value::Object(m)) = serde_json::from_str::<Value>(reply) else { return false };
    let known = ["status", "x_star", "objective", "kkt", "error"];
    m.keys().all(|k| known.contains(&k.as_str()))
        && m.get("status") == Some(&Value::from("optimal"))
        && m.get("objective").and_then(Value::as_f64).is_some_and(f64::is_finite)
        && m
            .get("x_star")
            .and_then(Value::as_array)
            .is_some_and(|x| x.len() == n && x.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)))
}

#[test]
fn runner_outcomes_partition() {
    let doc = document();
    let code = template_script(&doc, Target::ExternalRunner, &SolverOptions::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0x0b5e);
    for (reply, expected) in REPLIES {
        assert_eq!(conforming(reply, 1), expected, "oracle disagrees with the table on {reply}");
    }
    for _ in 0..100 {
        let (reply, expected) = REPLIES[rng.random_range(0..REPLIES.len())];
        let exec = Executor {
            runner: RunnerConfig {
                command: vec!["/bin/sh".into(), "-c".into(), format!("cat > /dev/null; printf '%s\\n' '{reply}'")],
                ..Default::default()
            },
            limits: Limits {
                wall_secs: 5.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = exec.execute(&code);
        check_partition(&out, &doc);
        assert_eq!(out.q, expected, "reply {reply:?} gave {:?}", out.error);
    }
}

#[test]
fn runner_agrees_with_internal_solver() {
    let runner = RunnerConfig::default();
    if !runner.available() {
        eprintln!("optira-runner not on PATH; skipping cross-backend agreement");
        return;
    }
    for name in ["log_rate", "square", "cubic"] {
        let doc = model_document(&model_fixture(name), None);
        let internal = Executor::default().execute(&template_script(&doc, Target::Internal, &SolverOptions::default()));
        let external = Executor {
            runner: runner.clone(),
            ..Default::default()
        }
        .execute(&template_script(&doc, Target::ExternalRunner, &SolverOptions::default()));
        if let (Some(a), Some(b)) = (internal.solution, external.solution) {
            assert!(close(b.objective, a.objective, 1e-4), "{name}: {} vs {}", b.objective, a.objective);
        }
    }
}
