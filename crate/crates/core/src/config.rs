//! The TOML configuration file.
//!
//! ```toml
//! [backend]
//! kind = "mock"
//! mock_script = "mock.toml"
//!
//! [pipeline]
//! k = 4
//! epsilon = 1e-6
//!
//! [pipeline.fdc]
//! cap = 5
//!
//! [bench]
//! trials = 10
//! ```
//!
//! Relative paths resolve against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::BenchSettings;
use crate::llm::BackendConfig;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub bench: BenchSettings,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Config, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: base.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(script) = c.backend.mock_script.as_mut().filter(|p| p.is_relative()) {
            *script = base.join(&*script);
        }
        if let Some(prog) = c.pipeline.runner.command.first_mut().filter(|p| p.starts_with("./") || p.starts_with("../")) {
            *prog = base.join(&*prog).to_string_lossy().into_owned();
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Config::parse(&text, path.parent().unwrap_or(Path::new(".")))
            .map_err(|e| match e {
                ConfigError::Parse { message, .. } => ConfigError::Parse {
                    path: path.to_path_buf(),
                    message,
                },
                other => other,
            })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline.validate().map_err(ConfigError::Invalid)?;
        self.bench.validate().map_err(ConfigError::Invalid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::BackendKind;

    #[test]
    fn sections_and_relative_paths() {
        let text = "[backend]\nkind = \"mock\"\nmock_script = \"m.toml\"\n[pipeline]\nk = 3\n[pipeline.fdc]\ncap = 7\n[pipeline.ablation]\no_ecl = true\n[bench]\ntrials = 2\n";
        let c = Config::parse(text, Path::new("/etc/optira")).unwrap();
        assert_eq!(c.backend.kind, BackendKind::Mock);
        assert_eq!(c.backend.mock_script, Some(PathBuf::from("/etc/optira/m.toml")));
        assert_eq!((c.pipeline.k, c.pipeline.fdc.cap, c.bench.trials), (3, 7, 2));
        assert!(c.pipeline.ablation.o_ecl);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn defaults_and_errors() {
        assert_eq!(Config::parse("", Path::new(".")).unwrap(), Config::default());
        assert!(matches!(Config::parse("[pipeline]\nkay = 1\n", Path::new(".")), Err(ConfigError::Parse { .. })));
        let c = Config::parse("[pipeline]\nk = 0\n", Path::new(".")).unwrap();
        assert!(c.validate().is_err());
    }
}
