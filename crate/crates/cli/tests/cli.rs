use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn optira(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optira"))
        .args(args)
        .env_remove("OPTIRA_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes one corpus problem's text to `dir/<id>.txt`.
fn problem_file(dir: &Path, corpus: &str, id: &str) -> PathBuf {
    let c: Value = serde_json::from_str(&std::fs::read_to_string(data(corpus)).unwrap()).unwrap();
    let p = c.as_array().unwrap().iter().find(|p| p["id"] == id).unwrap();
    let path = dir.join(format!("{id}.txt"));
    std::fs::write(&path, p["text"].as_str().unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_sample_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let problem = problem_file(dir.path(), "wireopt_sample.json", "w01");
    let out = dir.path().join("out");
    let mock = data("wireopt_sample.mock.toml");
    let o = optira(&["solve", s(&problem), "--mock-script", s(&mock), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run.json", "model.json", "solution.json", "summary.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let sol: Value = serde_json::from_str(&std::fs::read_to_string(out.join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["feasibility"]["v"], true);
    assert!(stdout(&o).contains("V=1"));
}

#[test]
fn inline_text_uses_the_given_id() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(problem_file(dir.path(), "wireopt_sample.json", "w03")).unwrap();
    let mock = data("wireopt_sample.mock.toml");
    let out = dir.path().join("out");
    let o = optira(&["solve", "--text", &text, "--id", "w03", "--mock-script", s(&mock), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_file_is_an_input_error() {
    let o = optira(&["solve", "/nonexistent/problem.txt"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn exhausted_fdc_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let problem = problem_file(dir.path(), "metrics5.json", "f4");
    let mock = data("metrics5.mock.toml");
    let out = dir.path().join("out");
    let o = optira(&["solve", s(&problem), "--mock-script", s(&mock), "--out-dir", s(&out)]);
    assert_eq!(code(&o), 4, "{}", stdout(&o));
    let run: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["fdc_iterations"], 5);
}

#[test]
fn model_documents_solve_without_a_backend() {
    let dir = tempfile::tempdir().unwrap();
    let o = optira(&["solve", s(&data("models/cubic.json")), "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn backend_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let problem = problem_file(dir.path(), "wireopt_sample.json", "w01");
    assert_eq!(code(&optira(&["solve", s(&problem), "--out-dir", s(dir.path())])), 3);
    let o = optira(&["solve", s(&problem), "--backend", "remote", "--out-dir", s(dir.path())]);
    assert_eq!(code(&o), 3);
}

fn bench(extra: &[&str]) -> (Output, PathBuf, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let corpus = data("wireopt_sample.json");
    let mock = data("wireopt_sample.mock.toml");
    let mut args = vec!["bench", s(&corpus), "--mock-script", s(&mock), "--N", "2", "--out-dir", s(&out)];
    args.extend_from_slice(extra);
    let args: Vec<String> = args.into_iter().map(str::to_string).collect();
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    (optira(&args), out, dir)
}

#[test]
fn bench_sample_rates() {
    let (o, out, _dir) = bench(&[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    // eleven of the twelve sample problems are feasible; w11 is not and
    // never executes
    assert_eq!(report["metrics"]["execution_rate"].as_f64().unwrap(), 11.0 / 12.0);
    assert_eq!(report["metrics"]["success_rate"].as_f64().unwrap(), 11.0 / 12.0);
    assert_eq!(report["metrics"]["config"], "full");
    let lines = std::fs::read_to_string(out.join("records.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 24);
    assert!(out.join("report.txt").is_file());
}

#[test]
fn bench_report_names_the_ablation() {
    let (o, out, _dir) = bench(&["--ablate", "o-ecl"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("configuration: o-ecl"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["config"], "o-ecl");
}

#[test]
fn malformed_corpus_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("bad.json");
    std::fs::write(&corpus, "[{\"id\": 3}]").unwrap();
    let mock = data("wireopt_sample.mock.toml");
    assert_eq!(code(&optira(&["bench", s(&corpus), "--mock-script", s(&mock)])), 2);
}

#[test]
fn inspect_stages() {
    let o = optira(&["inspect", "curvature", s(&data("models/log_rate.json"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("problem convex, 0 offenders"), "{}", stdout(&o));
    let o = optira(&["inspect", "convexify", s(&data("models/bilinear.json"))]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("anchor x1=1.25 x2=2") && text.contains("surrogate"), "{text}");
    let o = optira(&["inspect", "model", s(&data("models/square.json"))]);
    assert!(stdout(&o).starts_with("minimize"));
}

#[test]
fn unknown_stage_prints_usage() {
    let o = optira(&["inspect", "solver", s(&data("models/square.json"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values: model, curvature, convexify"));
}

#[test]
fn example_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let o = optira(&[
        "solve",
        s(&data("models/square.json")),
        "--config",
        s(&data("optira.example.toml")),
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
