mod args;
mod commands;
mod exit;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use exit::{Failure, Outcome};

fn run(cli: Cli) -> Result<Outcome, Failure> {
    let common = cli.command.common();
    let config = common.config()?;
    match &cli.command {
        Command::Solve { problem, text, id, .. } => {
            let p = match (problem, text) {
                (_, Some(t)) if t.trim().is_empty() => return Err(Failure::input("problem text is empty")),
                (_, Some(t)) => commands::Problem::Text {
                    id: args::problem_id(id, None),
                    text: t.clone(),
                },
                (Some(path), None) => commands::load_problem(path, id)?,
                (None, None) => return Err(Failure::input("no problem given")),
            };
            commands::solve(p, &config, &common.out_dir)
        }
        Command::Bench { corpus, .. } => commands::bench(corpus, &config, &common.out_dir),
        Command::Inspect { stage, problem, id, .. } => {
            commands::inspect(*stage, commands::load_problem(problem, id)?, &config)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.command.common().verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let outcome = match catch_unwind(AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(o)) => o,
        Ok(Err(f)) => {
            eprintln!("optira: {}", f.message);
            f.outcome
        }
        Err(_) => Outcome::Internal,
    };
    outcome.into()
}
