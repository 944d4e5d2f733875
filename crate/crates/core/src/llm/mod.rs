//! Language-model backends: a scripted mock and a chat-completion client.

mod mock;
mod remote;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{Exhaustion, MockBackend, MockResponse, MockScript};
pub use remote::RemoteBackend;

/// Outbound HTTP requests made by any remote backend in this process.
static NETWORK_CALLS: AtomicUsize = AtomicUsize::new(0);

pub fn network_calls() -> usize {
    NETWORK_CALLS.load(Ordering::SeqCst)
}

pub(crate) fn count_network_call() {
    NETWORK_CALLS.fetch_add(1, Ordering::SeqCst);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Model,
    Consistency,
    Codegen,
    Repair,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Extract, Stage::Model, Stage::Consistency, Stage::Codegen, Stage::Repair];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Model => "model",
            Stage::Consistency => "consistency",
            Stage::Codegen => "codegen",
            Stage::Repair => "repair",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| BackendError::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingKey(String),
    #[error("request failed after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("mock script exhausted at stage `{stage}`")]
    Exhausted { stage: Stage },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<String, BackendError>;

    /// A handle for one pipeline run. Mock forks restart the script;
    /// remote forks share the connection and rate limiter.
    fn fork(&self) -> Box<dyn Backend>;

    fn kind(&self) -> BackendKind;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(BackendError::InvalidConfig(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub requests_per_minute: u32,
    /// First retry delay; later delays double.
    pub backoff_ms: u64,
    pub mock_script: Option<std::path::PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            api_key_env: "OPTIRA_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            temperature: 0.0,
            requests_per_minute: 60,
            backoff_ms: 1000,
            mock_script: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidConfig(m.to_string()));
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout must be positive");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be positive");
        }
        if self.kind == BackendKind::Mock && self.mock_script.is_none() {
            return bad("mock backend needs a mock script");
        }
        Ok(())
    }

    /// Validates and constructs the backend. Reads the mock script or
    /// checks the API key; never touches the network.
    pub fn build(&self) -> Result<Arc<dyn Backend>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let path = self.mock_script.as_ref().expect("validated");
                Ok(Arc::new(MockBackend::new(MockScript::load(path)?)))
            }
            BackendKind::Remote => Ok(Arc::new(RemoteBackend::new(self.clone())?)),
        }
    }
}

/// One prompt and its reply, kept in run records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: Stage,
    pub prompt: String,
    pub response: Result<String, String>,
}

/// A backend bound to one problem, recording every exchange. Prompts
/// start with `problem=<id> stage=<stage>` so mock matchers can key on them.
pub struct Session<'a> {
    backend: &'a dyn Backend,
    pub problem_id: String,
    pub exchanges: Vec<Exchange>,
}

impl<'a> Session<'a> {
    pub fn new(backend: &'a dyn Backend, problem_id: impl Into<String>) -> Session<'a> {
        Session {
            backend,
            problem_id: problem_id.into(),
            exchanges: Vec::new(),
        }
    }

    pub fn backend(&self) -> &'a dyn Backend {
        self.backend
    }

    pub fn ask(&mut self, stage: Stage, body: &str) -> Result<String, BackendError> {
        let prompt = format!("problem={} stage={stage}\n{body}", self.problem_id);
        let response = self.backend.complete(stage, &prompt);
        self.exchanges.push(Exchange {
            stage,
            prompt,
            response: response.clone().map_err(|e| e.to_string()),
        });
        response
    }
}

/// The contents of the first fenced block, or the trimmed text when
/// there is no fence.
pub fn fenced_block(text: &str) -> Option<&str> {
    let Some(open) = text.find("```") else {
        let t = text.trim();
        return (!t.is_empty()).then_some(t);
    };
    let rest = &text[open + 3..];
    let body_start = rest.find('\n')? + 1;
    let body = &rest[body_start..];
    let close = body.find("```")?;
    Some(body[..close].trim_end_matches(['\n', '\r']))
}
