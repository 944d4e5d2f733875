//! Corpus loading, repeated trials, run records and rate metrics.
//!
//! Execution and success rates are means over problems of per-problem
//! means over trials. Records are written before any metric is computed,
//! and metrics recomputed from the written file are bit-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::hash::trial_seed;
use crate::llm::Backend;
use crate::model::ModelDocument;
use crate::pipeline::{run_text, PipelineConfig, PipelineRun};

/// Version of the JSONL record layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusProblem {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_model: Option<ModelDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_optimum: Option<f64>,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("empty corpus")]
    Empty,
    #[error("duplicate problem id `{0}`")]
    DuplicateId(String),
    #[error("problem `{id}`: invalid reference model: {message}")]
    Reference { id: String, message: String },
}

pub fn parse_corpus(text: &str, path: &Path) -> Result<Vec<CorpusProblem>, CorpusError> {
    let problems: Vec<CorpusProblem> = serde_json::from_str(text).map_err(|e| CorpusError::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    if problems.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut seen = BTreeSet::new();
    for p in &problems {
        if !seen.insert(p.id.as_str()) {
            return Err(CorpusError::DuplicateId(p.id.clone()));
        }
        if let Some(m) = &p.reference_model {
            m.to_standard().map_err(|e| CorpusError::Reference {
                id: p.id.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(problems)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusProblem>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    /// Ablation label of the configuration that produced the record.
    pub config: String,
    /// 1-based.
    pub trial: u32,
    pub seed: u64,
    #[serde(flatten)]
    pub run: PipelineRun,
}

impl RunRecord {
    pub fn problem_id(&self) -> &str {
        &self.run.problem_id
    }

    /// Feasible success requires executed code.
    pub fn is_consistent(&self) -> bool {
        !self.run.v || self.run.q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemMetrics {
    pub id: String,
    pub trials: u32,
    pub execution_rate: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub config: String,
    pub problems: usize,
    pub execution_rate: f64,
    pub success_rate: f64,
    pub per_problem: Vec<ProblemMetrics>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark settings: {0}")]
    InvalidConfig(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no run records")]
    NoRecords,
    #[error("records mix configurations: {0}")]
    MixedConfigs(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub trials: u32,
    /// Worker threads; `0` picks the logical core count capped at 8.
    pub jobs: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { trials: 10, jobs: 0 }
    }
}

impl BenchSettings {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=100).contains(&self.trials) {
            return Err(format!("N = {} is outside 1..=100", self.trials));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        match self.jobs {
            0 => std::thread::available_parallelism().map_or(1, |n| n.get()).min(8),
            n => n,
        }
    }
}

/// Runs every problem `trials` times; each run gets its own backend fork.
pub fn run_trials(
    corpus: &[CorpusProblem],
    backend: &dyn Backend,
    config: &PipelineConfig,
    settings: &BenchSettings,
) -> Result<Vec<RunRecord>, BenchError> {
    settings.validate().map_err(BenchError::InvalidConfig)?;
    config.validate().map_err(BenchError::InvalidConfig)?;
    if corpus.is_empty() {
        return Err(BenchError::EmptyCorpus);
    }
    let jobs: Vec<(&CorpusProblem, u32)> = corpus
        .iter()
        .flat_map(|p| (1..=settings.trials).map(move |i| (p, i)))
        .collect();
    let label = config.ablation.to_string();
    let forks: Vec<Box<dyn Backend>> = jobs.iter().map(|_| backend.fork()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers())
        .build()
        .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let records = pool.install(|| {
        jobs.par_iter()
            .zip(forks.par_iter())
            .map(|((problem, trial), fork)| {
                log::info!("{} trial {trial}", problem.id);
                RunRecord {
                    schema_version: SCHEMA_VERSION,
                    config: label.clone(),
                    trial: *trial,
                    seed: trial_seed(&problem.id, *trial as usize),
                    run: run_text(&problem.id, &problem.text, fork.as_ref(), config),
                }
            })
            .collect()
    });
    Ok(records)
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), BenchError> {
    let err = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(err)?;
    }
    w.flush().map_err(err)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let file = File::open(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let bad = |message: String| BenchError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RunRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(bad(format!("unsupported schema version {}", r.schema_version)));
        }
        out.push(r);
    }
    Ok(out)
}

fn single_config(records: &[RunRecord]) -> Result<&str, BenchError> {
    let first = records.first().ok_or(BenchError::NoRecords)?;
    let configs: BTreeSet<&str> = records.iter().map(|r| r.config.as_str()).collect();
    if configs.len() > 1 {
        return Err(BenchError::MixedConfigs(configs.into_iter().collect::<Vec<_>>().join(", ")));
    }
    Ok(&first.config)
}

/// Means over problems of per-problem means over trials. Order of the
/// records does not matter.
pub fn compute_metrics(records: &[RunRecord]) -> Result<Metrics, BenchError> {
    let config = single_config(records)?.to_string();
    let mut by_problem: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_problem.entry(r.problem_id()).or_default().push(r);
    }
    let per_problem: Vec<ProblemMetrics> = by_problem
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.trial);
            let n = rs.len() as f64;
            let mean = |f: fn(&RunRecord) -> bool| rs.iter().map(|r| f64::from(u8::from(f(r)))).sum::<f64>() / n;
            ProblemMetrics {
                id: id.to_string(),
                trials: rs.len() as u32,
                execution_rate: mean(|r| r.run.q),
                success_rate: mean(|r| r.run.v),
            }
        })
        .collect();
    let d = per_problem.len() as f64;
    Ok(Metrics {
        config,
        problems: per_problem.len(),
        execution_rate: per_problem.iter().map(|p| p.execution_rate).sum::<f64>() / d,
        success_rate: per_problem.iter().map(|p| p.success_rate).sum::<f64>() / d,
        per_problem,
    })
}

pub struct BenchOutput {
    pub records: Vec<RunRecord>,
    pub metrics: Metrics,
}

/// Runs the trials, persists the records to `records_path`, then
/// computes metrics from what was written.
pub fn run_benchmark(
    corpus: &[CorpusProblem],
    backend: &dyn Backend,
    config: &PipelineConfig,
    settings: &BenchSettings,
    records_path: &Path,
) -> Result<BenchOutput, BenchError> {
    let records = run_trials(corpus, backend, config, settings)?;
    write_records(records_path, &records)?;
    let metrics = compute_metrics(&read_records(records_path)?)?;
    Ok(BenchOutput { records, metrics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json: serde_json::Value,
}

/// Count of records per iteration count, from zero to the largest seen.
fn histogram(values: impl Iterator<Item = u32>) -> Vec<usize> {
    let values: Vec<u32> = values.collect();
    let max = values.iter().copied().max().unwrap_or(0) as usize;
    let mut h = vec![0; max + 1];
    for v in values {
        h[v as usize] += 1;
    }
    h
}

pub fn emit_report(records: &[RunRecord], metrics: &Metrics) -> Result<Report, BenchError> {
    let config = single_config(records)?;
    if config != metrics.config {
        return Err(BenchError::MixedConfigs(format!("{config}, {}", metrics.config)));
    }
    let ecl = histogram(records.iter().map(|r| r.run.ecl_iterations));
    let fdc = histogram(records.iter().map(|r| r.run.fdc_iterations));
    let mut text = format!("configuration: {config}\n\n");
    let width = metrics.per_problem.iter().map(|p| p.id.len()).max().unwrap_or(0).max(7);
    text.push_str(&format!("{:<width$}  {:>6}  {:>9}  {:>7}\n", "problem", "trials", "execution", "success"));
    for p in &metrics.per_problem {
        text.push_str(&format!(
            "{:<width$}  {:>6}  {:>9.3}  {:>7.3}\n",
            p.id, p.trials, p.execution_rate, p.success_rate
        ));
    }
    text.push_str(&format!("\nexecution rate  {:.4}\n", metrics.execution_rate));
    text.push_str(&format!("success rate    {:.4}\n", metrics.success_rate));
    let line = |h: &[usize]| h.iter().enumerate().map(|(i, c)| format!("{i}:{c}")).collect::<Vec<_>>().join(" ");
    text.push_str(&format!("\nECL iterations  {}\n", line(&ecl)));
    text.push_str(&format!("FDC iterations  {}\n", line(&fdc)));
    let json = json!({
        "schema_version": SCHEMA_VERSION,
        "metrics": metrics,
        "histograms": {"ecl_iterations": ecl, "fdc_iterations": fdc},
        "records": records.len(),
    });
    Ok(Report { text, json })
}
