//! The external runner: one child process per execution speaking
//! newline-delimited JSON over stdin and stdout.
//!
//! The child runs in a fresh scratch directory with a cleared
//! environment, an address-space limit and, when the kernel offers it, a
//! Landlock ruleset confining writes to the scratch directory.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::landlock::{self, Ruleset};
use super::{check_script, excerpt, ErrorClass, ErrorReport, GeneratedCode, Limits};
use crate::model::ModelDocument;
use crate::solver::{Kkt, Solution, SolverOptions, Status};

pub const PROTOCOL: &str = "optira-runner/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    #[default]
    ModelingSolver,
    MilpSolver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunnerConfig {
    /// Program and leading arguments.
    pub command: Vec<String>,
    pub solver: SolverChoice,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        RunnerConfig {
            command: vec!["optira-runner".into()],
            solver: SolverChoice::ModelingSolver,
        }
    }
}

impl RunnerConfig {
    /// The program path when it exists, searching `PATH` for bare names.
    pub fn program(&self) -> Option<PathBuf> {
        let prog = self.command.first()?;
        if prog.contains('/') {
            let p = PathBuf::from(prog);
            return p.is_file().then_some(p);
        }
        std::env::split_paths(&std::env::var_os("PATH")?)
            .map(|d| d.join(prog))
            .find(|p| p.is_file())
    }

    pub fn available(&self) -> bool {
        self.program().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerOptions {
    pub tolerance: f64,
    pub time_limit: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub protocol: String,
    pub model: ModelDocument,
    pub solver: SolverChoice,
    pub options: RunnerOptions,
    pub script: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplyStatus {
    Optimal,
    Infeasible,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplyError {
    Message(String),
    Classified { class: ErrorClass, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerReply {
    pub status: ReplyStatus,
    #[serde(default)]
    pub x_star: Option<Vec<Option<f64>>>,
    #[serde(default)]
    pub objective: Option<f64>,
    #[serde(default)]
    pub kkt: Option<Kkt>,
    #[serde(default)]
    pub error: Option<ReplyError>,
}

impl RunnerReply {
    /// Checks the reply against the model and converts it.
    pub fn into_solution(self, model: &ModelDocument) -> Result<Solution, ErrorReport> {
        let schema = |m: &str| ErrorReport::new(ErrorClass::Schema, m, "");
        match self.status {
            ReplyStatus::Optimal => {
                let x = self.x_star.ok_or_else(|| schema("optimal reply without x_star"))?;
                let x: Vec<f64> = x
                    .into_iter()
                    .map(|v| v.filter(|v| v.is_finite()))
                    .collect::<Option<_>>()
                    .ok_or_else(|| schema("optimal reply with a non-finite x_star entry"))?;
                if x.len() != model.variables.len() {
                    return Err(schema(&format!(
                        "x_star has {} entries, the model {} variables",
                        x.len(),
                        model.variables.len()
                    )));
                }
                let objective = self
                    .objective
                    .filter(|f| f.is_finite())
                    .ok_or_else(|| schema("optimal reply without a finite objective"))?;
                Ok(Solution {
                    x_star: x,
                    objective,
                    status: Status::Optimal,
                    kkt: self.kkt.unwrap_or_else(Kkt::failed),
                    iterations: 0,
                    inequality_multipliers: Vec::new(),
                    equality_multipliers: Vec::new(),
                })
            }
            ReplyStatus::Infeasible => Err(ErrorReport::new(
                ErrorClass::SolverRejection,
                message_of(&self.error).unwrap_or_else(|| "runner reports infeasible".into()),
                "",
            )),
            ReplyStatus::Error => {
                let (class, message) = match self.error {
                    Some(ReplyError::Classified { class, message }) => (class, message),
                    Some(ReplyError::Message(m)) => (ErrorClass::Crash, m),
                    None => (ErrorClass::Crash, "runner reports an error".into()),
                };
                let ex = excerpt(message.lines().last().unwrap_or(""));
                Err(ErrorReport::new(class, message, ex))
            }
        }
    }
}

fn message_of(e: &Option<ReplyError>) -> Option<String> {
    e.as_ref().map(|e| match e {
        ReplyError::Message(m) | ReplyError::Classified { message: m, .. } => m.clone(),
    })
}

/// Parses the first line of the child's output.
pub fn parse_reply(stdout: &str) -> Result<RunnerReply, ErrorReport> {
    let line = stdout.lines().next().unwrap_or("");
    serde_json::from_str(line)
        .map_err(|e| ErrorReport::new(ErrorClass::Schema, format!("non-conforming reply: {e}"), excerpt(line)))
}

struct Output {
    stdout: String,
    stderr: String,
}

fn spawn(config: &RunnerConfig, scratch: &Path, limits: &Limits) -> std::io::Result<Child> {
    let program = config
        .program()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "runner not found"))?;
    let ruleset = match Ruleset::scratch_only(scratch) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("landlock unavailable ({e}); runner writes are confined by working directory only");
            None
        }
    };
    let fd = ruleset.as_ref().map(Ruleset::raw_fd);
    let memory = limits.memory_bytes;
    let mut cmd = Command::new(program);
    cmd.args(&config.command[1..])
        .current_dir(scratch)
        .env_clear()
        .env("PATH", std::env::var_os("PATH").unwrap_or_else(|| "/usr/bin:/bin".into()))
        .env("HOME", scratch)
        .env("TMPDIR", scratch)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    // SAFETY: the hook only issues async-signal-safe syscalls.
    unsafe {
        cmd.pre_exec(move || {
            let lim = libc::rlimit {
                rlim_cur: memory as libc::rlim_t,
                rlim_max: memory as libc::rlim_t,
            };
            if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                return Err(std::io::Error::last_os_error());
            }
            if let Some(fd) = fd {
                landlock::restrict_self(fd)?;
            }
            Ok(())
        });
    }
    let child = cmd.spawn();
    drop(ruleset);
    child
}

fn kill_group(child: &mut Child) {
    // SAFETY: signalling our own process group id.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut r) = r {
            let _ = r.read_to_end(&mut buf);
        }
        let _ = tx.send(String::from_utf8_lossy(&buf).into_owned());
    });
    rx
}

/// Runs the child to completion or the deadline.
fn converse(child: &mut Child, request: &str, wall: Duration) -> Result<Output, ErrorReport> {
    let deadline = Instant::now() + wall;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    if let Some(mut stdin) = child.stdin.take() {
        let line = format!("{request}\n");
        thread::spawn(move || {
            let _ = stdin.write_all(line.as_bytes());
        });
    }
    let timeout = || {
        ErrorReport::new(
            ErrorClass::Timeout,
            format!("runner exceeded {:.3} s", wall.as_secs_f64()),
            "",
        )
    };
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if Instant::now() >= deadline => {
                kill_group(child);
                return Err(timeout());
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                kill_group(child);
                return Err(ErrorReport::new(ErrorClass::Crash, format!("waiting on runner: {e}"), ""));
            }
        }
    }
    // Grandchildren may still hold the pipes open.
    let rest = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(100));
    let stdout = out.recv_timeout(rest).map_err(|_| {
        kill_group(child);
        timeout()
    })?;
    let stderr = err.recv_timeout(Duration::from_millis(100)).unwrap_or_default();
    Ok(Output { stdout, stderr })
}

pub(crate) fn run(
    config: &RunnerConfig,
    code: &GeneratedCode,
    start: &[(String, f64)],
    base: &SolverOptions,
    limits: &Limits,
) -> Result<Solution, ErrorReport> {
    let s = check_script(code)?;
    let options = s.options(*base);
    let mut script = code.script.clone();
    if !start.is_empty() {
        let extra: String = start.iter().map(|(n, v)| format!("start {n} {v:?}\n")).collect();
        script = match script.rfind("solve") {
            Some(i) => format!("{}{extra}{}", &script[..i], &script[i..]),
            None => script,
        };
    }
    let request = RunnerRequest {
        protocol: PROTOCOL.into(),
        model: code.model.clone(),
        solver: config.solver,
        options: RunnerOptions {
            tolerance: options.tolerance,
            time_limit: limits.wall_secs,
            max_iterations: options.max_inner,
        },
        script,
    };
    let request = serde_json::to_string(&request).expect("request serializes");
    let scratch = tempfile::Builder::new()
        .prefix("optira-run-")
        .tempdir()
        .map_err(|e| ErrorReport::new(ErrorClass::Crash, format!("cannot create scratch directory: {e}"), ""))?;
    let mut child = spawn(config, scratch.path(), limits)
        .map_err(|e| ErrorReport::new(ErrorClass::Crash, format!("cannot start runner: {e}"), ""))?;
    let out = converse(&mut child, &request, limits.wall())?;
    if out.stdout.trim().is_empty() {
        let status = child.try_wait().ok().flatten();
        return Err(ErrorReport::new(
            ErrorClass::Crash,
            format!(
                "runner exited without a reply ({})",
                status.map_or_else(|| "unknown status".into(), |s| s.to_string())
            ),
            excerpt(out.stderr.lines().last().unwrap_or("")),
        ));
    }
    parse_reply(&out.stdout)?.into_solution(&code.model)
}
