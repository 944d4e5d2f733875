//! Chat-completion client over HTTPS.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::{json, Value};

use super::{count_network_call, Backend, BackendConfig, BackendError, BackendKind, Stage};

/// Spaces requests at least `60 / requests_per_minute` seconds apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(requests_per_minute: u32) -> RateLimiter {
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / f64::from(requests_per_minute)),
            next: Mutex::new(Instant::now()),
        }
    }

    fn wait(&self) {
        let slot = {
            let mut next = self.next.lock().expect("rate limiter");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: BackendConfig,
    key: String,
    agent: ureq::Agent,
    limiter: Arc<RateLimiter>,
}

impl RemoteBackend {
    /// Fails with `MissingKey` before any request when the key variable
    /// is unset or empty.
    pub fn new(config: BackendConfig) -> Result<RemoteBackend, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::MissingKey(config.api_key_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = Arc::new(RateLimiter::new(config.requests_per_minute));
        Ok(RemoteBackend {
            config,
            key,
            agent,
            limiter,
        })
    }

    fn attempt(&self, prompt: &str) -> Result<String, Failure> {
        self.limiter.wait();
        count_network_call();
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(BackendError::Rejected(format!("HTTP {status}: {text}"))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Fatal(BackendError::Malformed(e.to_string())))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Failure::Fatal(BackendError::Malformed("no choices[0].message.content".into())))
    }
}

impl Backend for RemoteBackend {
    fn complete(&self, _stage: Stage, prompt: &str) -> Result<String, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for k in 0..attempts {
            match self.attempt(prompt) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
            if k + 1 < attempts {
                let jitter = rand::rng().random_range(0.0..=0.25);
                std::thread::sleep(delay.mul_f64(1.0 + jitter));
                delay *= 2;
            }
        }
        Err(BackendError::RetriesExhausted { attempts, last })
    }

    fn fork(&self) -> Box<dyn Backend> {
        Box::new(self.clone())
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given status codes in order, one connection each.
    fn serve(statuses: Vec<u16>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for status in statuses {
                let (mut s, _) = listener.accept().unwrap();
                let mut r = BufReader::new(s.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    r.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0; len];
                r.read_exact(&mut body).unwrap();
                let reply = r#"{"choices":[{"message":{"role":"assistant","content":"pong"}}]}"#;
                let text = if status == 200 { reply } else { "{}" };
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{text}",
                    text.len()
                )
                .unwrap();
            }
        });
        format!("http://{addr}/v1/chat/completions")
    }

    fn config(endpoint: String, env: &str) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint,
            api_key_env: env.into(),
            backoff_ms: 5,
            requests_per_minute: 60_000,
            max_retries: 2,
            timeout_secs: 5.0,
            ..Default::default()
        }
    }

    #[test]
    fn missing_key_fails_before_any_request() {
        let before = crate::llm::network_calls();
        let err = RemoteBackend::new(config("http://127.0.0.1:9/".into(), "OPTIRA_TEST_UNSET_KEY")).unwrap_err();
        assert_eq!(err, BackendError::MissingKey("OPTIRA_TEST_UNSET_KEY".into()));
        assert_eq!(crate::llm::network_calls(), before);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        std::env::set_var("OPTIRA_TEST_KEY_RETRY", "k");
        let b = RemoteBackend::new(config(serve(vec![500, 429, 200]), "OPTIRA_TEST_KEY_RETRY")).unwrap();
        assert_eq!(b.complete(Stage::Extract, "ping").unwrap(), "pong");
    }

    #[test]
    fn retries_are_bounded() {
        std::env::set_var("OPTIRA_TEST_KEY_BOUND", "k");
        let b = RemoteBackend::new(config(serve(vec![503, 503, 503]), "OPTIRA_TEST_KEY_BOUND")).unwrap();
        assert!(matches!(
            b.complete(Stage::Extract, "ping"),
            Err(BackendError::RetriesExhausted { attempts: 3, .. })
        ));
    }

    #[test]
    fn client_errors_are_not_retried() {
        std::env::set_var("OPTIRA_TEST_KEY_FATAL", "k");
        let b = RemoteBackend::new(config(serve(vec![401]), "OPTIRA_TEST_KEY_FATAL")).unwrap();
        assert!(matches!(b.complete(Stage::Extract, "ping"), Err(BackendError::Rejected(_))));
    }

    #[test]
    fn limiter_spaces_requests() {
        let l = RateLimiter::new(1200);
        let t = Instant::now();
        for _ in 0..3 {
            l.wait();
        }
        assert!(t.elapsed() >= Duration::from_millis(95));
    }
}
