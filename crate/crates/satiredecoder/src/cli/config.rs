//! Application configuration: JSON with `//` and `/* */` comments
//! stripped, schema-validated with unknown keys rejected, and `${VAR}`
//! interpolation for secrets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::BackendConfig;
use crate::uncertainty::SweepConfig;

use super::logging::LogLevel;
use super::CliError;

pub const API_KEY_ENV: &str = "SATIREDECODER_API_KEY";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoleBackend {
    /// The literal string "mock".
    Named(String),
    Http(BackendConfig),
}

impl RoleBackend {
    pub fn is_mock(&self) -> bool {
        matches!(self, RoleBackend::Named(_))
    }

    fn validate(&self, role: &str) -> Result<(), CliError> {
        match self {
            RoleBackend::Named(name) if name == "mock" => Ok(()),
            RoleBackend::Named(name) => Err(CliError::Config(format!(
                "backends.{role}: unknown backend '{name}' (expected \"mock\" or an http config object)"
            ))),
            RoleBackend::Http(config) => config
                .validate()
                .map_err(|e| CliError::Config(format!("backends.{role}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub tagger: RoleBackend,
    pub captioner: RoleBackend,
    pub analyzer: RoleBackend,
    pub reasoner: RoleBackend,
    pub embedder: RoleBackend,
    /// Mock fixture file (see docs/formats.md).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

impl BackendsConfig {
    pub fn all_mock() -> Self {
        let mock = || RoleBackend::Named("mock".to_string());
        Self {
            tagger: mock(),
            captioner: mock(),
            analyzer: mock(),
            reasoner: mock(),
            embedder: mock(),
            fixtures: None,
        }
    }

    fn roles(&self) -> [(&'static str, &RoleBackend); 5] {
        [
            ("tagger", &self.tagger),
            ("captioner", &self.captioner),
            ("analyzer", &self.analyzer),
            ("reasoner", &self.reasoner),
            ("embedder", &self.embedder),
        ]
    }

    fn roles_mut(&mut self) -> [(&'static str, &mut RoleBackend); 5] {
        [
            ("tagger", &mut self.tagger),
            ("captioner", &mut self.captioner),
            ("analyzer", &mut self.analyzer),
            ("reasoner", &mut self.reasoner),
            ("embedder", &mut self.embedder),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub log_level: LogLevel,
    /// Reasoner responses are cached by (request digest, temperature);
    /// disable when the backend does not honor seeds.
    #[serde(default = "default_true")]
    pub cache_reasoner: bool,
    pub backends: BackendsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

fn default_parallelism() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config = Self::parse(&text)?;
        config.interpolate_secrets()?;
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let stripped = strip_json_comments(text);
        serde_json::from_str(&stripped).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be >= 1".to_string()));
        }
        self.sweep
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for (role, backend) in self.backends.roles() {
            backend.validate(role)?;
        }
        if let Some(fixtures) = &self.backends.fixtures {
            if !fixtures.exists() {
                return Err(CliError::Config(format!(
                    "fixture file {} does not exist",
                    fixtures.display()
                )));
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Resolve `${VAR}` references in api_key fields, then apply the
    /// `SATIREDECODER_API_KEY` override. Secrets are the only values that
    /// interpolate.
    fn interpolate_secrets(&mut self) -> Result<(), CliError> {
        let override_key = std::env::var(API_KEY_ENV).ok();
        for (role, backend) in self.backends.roles_mut() {
            if let RoleBackend::Http(config) = backend {
                if let Some(key) = &config.api_key {
                    if let Some(var) = key.strip_prefix("${").and_then(|s| s.strip_suffix('}')) {
                        let value = std::env::var(var).map_err(|_| {
                            CliError::Config(format!(
                                "backends.{role}.api_key references unset env var '{var}'"
                            ))
                        })?;
                        config.api_key = Some(value);
                    }
                }
                if let Some(over) = &override_key {
                    config.api_key = Some(over.clone());
                }
            }
        }
        Ok(())
    }
}

/// Remove `//` line comments and `/* */` block comments that appear
/// outside JSON strings.
pub fn strip_json_comments(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut in_string = false;
    let mut escaped = false;
    while let Some(c) = chars.next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            '/' if chars.peek() == Some(&'/') => {
                for next in chars.by_ref() {
                    if next == '\n' {
                        out.push('\n');
                        break;
                    }
                }
            }
            '/' if chars.peek() == Some(&'*') => {
                chars.next();
                let mut prev = '\0';
                for next in chars.by_ref() {
                    if prev == '*' && next == '/' {
                        break;
                    }
                    prev = next;
                }
            }
            _ => out.push(c),
        }
    }
    out
}
