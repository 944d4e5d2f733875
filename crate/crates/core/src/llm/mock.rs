//! Scripted backend. Responses are consumed in file order; each prompt
//! takes the first unused response whose stage agrees and whose matcher
//! occurs in the prompt digest.

use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, Stage};

/// Characters of the prompt that enter the digest.
pub const DIGEST_CHARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exhaustion {
    #[default]
    Error,
    RepeatLast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockResponse {
    pub stage: Stage,
    /// Substring of the digest; empty matches everything.
    #[serde(default, rename = "match")]
    pub matcher: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub exhaustion: Exhaustion,
    #[serde(default, rename = "response")]
    pub responses: Vec<MockResponse>,
}

impl MockScript {
    pub fn parse(text: &str) -> Result<MockScript, BackendError> {
        toml::from_str(text).map_err(|e| BackendError::InvalidConfig(format!("mock script: {e}")))
    }

    pub fn load(path: &Path) -> Result<MockScript, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::InvalidConfig(format!("mock script {}: {e}", path.display())))?;
        MockScript::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("mock scripts serialize")
    }
}

/// `"<stage> <first DIGEST_CHARS chars of prompt>"`.
pub fn digest(stage: Stage, prompt: &str) -> String {
    let head: String = prompt.chars().take(DIGEST_CHARS).collect();
    format!("{stage} {head}")
}

#[derive(Debug, Default)]
struct Cursor {
    used: Vec<bool>,
    last: Option<usize>,
}

#[derive(Debug)]
pub struct MockBackend {
    script: Arc<MockScript>,
    cursor: Mutex<Cursor>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> MockBackend {
        MockBackend::shared(Arc::new(script))
    }

    fn shared(script: Arc<MockScript>) -> MockBackend {
        let used = vec![false; script.responses.len()];
        MockBackend {
            script,
            cursor: Mutex::new(Cursor { used, last: None }),
        }
    }

    pub fn remaining(&self) -> usize {
        self.cursor.lock().expect("mock cursor").used.iter().filter(|u| !**u).count()
    }
}

impl Backend for MockBackend {
    fn complete(&self, stage: Stage, prompt: &str) -> Result<String, BackendError> {
        let key = digest(stage, prompt);
        let mut cur = self.cursor.lock().expect("mock cursor");
        let fits = |r: &MockResponse| r.stage == stage && key.contains(&r.matcher);
        let next = self
            .script
            .responses
            .iter()
            .enumerate()
            .find(|(i, r)| !cur.used[*i] && fits(r))
            .map(|(i, _)| i);
        if let Some(i) = next {
            cur.used[i] = true;
            cur.last = Some(i);
            return Ok(self.script.responses[i].text.clone());
        }
        if self.script.exhaustion == Exhaustion::RepeatLast {
            let again = (0..self.script.responses.len())
                .rev()
                .find(|&i| cur.used[i] && fits(&self.script.responses[i]));
            if let Some(i) = again {
                return Ok(self.script.responses[i].text.clone());
            }
        }
        Err(BackendError::Exhausted { stage })
    }

    fn fork(&self) -> Box<dyn Backend> {
        Box::new(MockBackend::shared(Arc::clone(&self.script)))
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = r#"
exhaustion = "error"

[[response]]
stage = "extract"
text = "first"

[[response]]
stage = "model"
match = "problem=p2 "
text = "p2 model"

[[response]]
stage = "model"
text = "any model"
"#;

    #[test]
    fn verbatim_and_ordered() {
        let m = MockBackend::new(MockScript::parse(SCRIPT).unwrap());
        assert_eq!(m.complete(Stage::Extract, "problem=p1 stage=extract").unwrap(), "first");
        assert_eq!(m.complete(Stage::Model, "problem=p1 stage=model").unwrap(), "any model");
        assert_eq!(
            m.complete(Stage::Extract, "again").unwrap_err(),
            BackendError::Exhausted { stage: Stage::Extract }
        );
    }

    #[test]
    fn matcher_selects_by_digest() {
        let m = MockBackend::new(MockScript::parse(SCRIPT).unwrap());
        assert_eq!(m.complete(Stage::Model, "problem=p2 stage=model").unwrap(), "p2 model");
        // the matcher only sees the first DIGEST_CHARS characters
        let late = format!("{}problem=p2 ", "x".repeat(DIGEST_CHARS));
        let m = MockBackend::new(MockScript::parse(SCRIPT).unwrap());
        assert_eq!(m.complete(Stage::Model, &late).unwrap(), "any model");
    }

    #[test]
    fn repeat_last_policy() {
        let text = SCRIPT.replace("\"error\"", "\"repeat-last\"");
        let m = MockBackend::new(MockScript::parse(&text).unwrap());
        assert_eq!(m.complete(Stage::Extract, "a").unwrap(), "first");
        assert_eq!(m.complete(Stage::Extract, "b").unwrap(), "first");
        assert!(m.complete(Stage::Codegen, "c").is_err());
    }

    #[test]
    fn forks_restart_the_script() {
        let m = MockBackend::new(MockScript::parse(SCRIPT).unwrap());
        m.complete(Stage::Extract, "a").unwrap();
        let f = m.fork();
        assert_eq!(f.complete(Stage::Extract, "a").unwrap(), "first");
        assert_eq!(m.remaining(), 2);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(MockScript::parse("[[response]]\nstage = \"extract\"\ntext = \"t\"\nweight = 2\n").is_err());
        assert!(MockScript::parse("[[response]]\nstage = \"plan\"\ntext = \"t\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = MockScript::parse(SCRIPT).unwrap();
        assert_eq!(MockScript::parse(&s.to_toml()).unwrap(), s);
    }
}
