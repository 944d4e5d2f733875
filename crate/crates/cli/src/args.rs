//! Command-line flags and their merge over the configuration file.
//! Flags override the file; the environment is consulted only for the
//! API key, by the remote backend itself.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use optira::config::Config;
use optira::llm::BackendKind;

use crate::exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "optira", version, about = "Wireless resource allocation from problem text to solved convex programs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the whole pipeline on one problem.
    Solve {
        /// Problem text file, or a model document ending in `.json`.
        #[arg(required_unless_present = "text")]
        problem: Option<PathBuf>,
        /// Inline problem text instead of a file.
        #[arg(long, conflicts_with = "problem")]
        text: Option<String>,
        /// Problem identifier used in prompts and records.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every corpus problem N times and report the rates.
    Bench {
        /// Corpus JSON file.
        corpus: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the state after one stage.
    Inspect {
        #[arg(value_enum)]
        stage: InspectStage,
        /// Problem text file, or a model document ending in `.json`.
        problem: PathBuf,
        /// Problem identifier used in prompts.
        #[arg(long)]
        id: Option<String>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InspectStage {
    Model,
    Curvature,
    Convexify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateArg {
    #[value(name = "o-convex")]
    OConvex,
    #[value(name = "o-ecl")]
    OEcl,
    #[value(name = "o-fdc")]
    OFdc,
}

impl AblateArg {
    fn name(self) -> &'static str {
        match self {
            AblateArg::OConvex => "o-convex",
            AblateArg::OEcl => "o-ecl",
            AblateArg::OFdc => "o-fdc",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Language-model backend.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Scripted responses for the mock backend.
    #[arg(long, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
    /// Disable a component; repeat or separate with commas.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<AblateArg>,
    /// Error-correction cap.
    #[arg(long = "K", value_parser = clap::value_parser!(u32).range(1..=20))]
    pub k: Option<u32>,
    /// Feedback-driven correction cap.
    #[arg(long = "L", value_parser = clap::value_parser!(u32).range(1..=20))]
    pub l: Option<u32>,
    /// Trials per problem.
    #[arg(long = "N", value_parser = clap::value_parser!(u32).range(1..=100))]
    pub n: Option<u32>,
    /// Feasibility tolerance.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Worker threads; 0 uses the logical cores, at most 8.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Directory for records, artifacts and reports.
    #[arg(long, value_name = "DIR", default_value = "optira-out")]
    pub out_dir: PathBuf,
    /// More logging; repeat for more.
    #[arg(long, short, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

impl Common {
    /// The file configuration with the flags applied, validated.
    pub fn config(&self) -> Result<Config, Failure> {
        let mut c = match &self.config {
            Some(path) => Config::load(path).map_err(Failure::input)?,
            None => Config::default(),
        };
        if let Some(b) = self.backend {
            c.backend.kind = match b {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Remote => BackendKind::Remote,
            };
        }
        if let Some(p) = &self.mock_script {
            c.backend.mock_script = Some(p.clone());
        }
        for a in &self.ablate {
            c.pipeline.ablation.set(a.name()).map_err(Failure::input)?;
        }
        if let Some(k) = self.k {
            c.pipeline.k = k;
        }
        if let Some(l) = self.l {
            c.pipeline.fdc.cap = l;
        }
        if let Some(n) = self.n {
            c.bench.trials = n;
        }
        if let Some(e) = self.epsilon {
            c.pipeline.epsilon = e;
        }
        if let Some(j) = self.jobs {
            c.bench.jobs = j;
        }
        c.validate().map_err(Failure::input)?;
        Ok(c)
    }
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Solve { common, .. } | Command::Bench { common, .. } | Command::Inspect { common, .. } => common,
        }
    }
}

/// Identifier for a problem file: the explicit one, else the file stem.
pub fn problem_id(id: &Option<String>, path: Option<&Path>) -> String {
    id.clone()
        .or_else(|| path.and_then(|p| p.file_stem()).map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "cli".into())
}
