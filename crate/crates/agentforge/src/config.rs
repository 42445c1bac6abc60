//! Engine configuration: one structured file (YAML or JSON, detected by
//! extension) declaring LLM profiles, workspace location, parallelism, and
//! optimizer settings. Loading applies defaults and validates invariants up
//! front so later layers can assume a well-formed [`Config`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolve::OptimizerConfig;
use crate::llm::LLMConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid config: field {field}: {message}")]
    Validation { field: String, message: String },
    #[error("unsupported config extension {extension:?} (expected .yaml, .yml, or .json)")]
    UnsupportedExtension { extension: String },
}

/// Verbosity floor for the structured logger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Debug,
    #[default]
    Info,
    Warn,
    Error,
}

impl LogLevel {
    pub fn to_filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Error => log::LevelFilter::Error,
        }
    }
}

/// Top-level engine configuration. Immutable after [`load_config`]; share it
/// freely across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Named LLM profiles. Everything that talks to a model refers to one of
    /// these by name.
    #[serde(default)]
    pub llm_profiles: BTreeMap<String, LLMConfig>,
    /// Directory for logs, checkpoints, and reports.
    #[serde(default = "default_workspace_dir")]
    pub workspace_dir: PathBuf,
    #[serde(default = "default_max_parallel_nodes")]
    pub max_parallel_nodes: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub log_level: LogLevel,
}

fn default_workspace_dir() -> PathBuf {
    PathBuf::from("workspace")
}

fn default_max_parallel_nodes() -> usize {
    4
}

impl Default for Config {
    fn default() -> Self {
        Config {
            llm_profiles: BTreeMap::new(),
            workspace_dir: default_workspace_dir(),
            max_parallel_nodes: default_max_parallel_nodes(),
            optimizer: OptimizerConfig::default(),
            log_level: LogLevel::default(),
        }
    }
}

impl Config {
    /// Fills provider-specific profile defaults and checks every invariant.
    /// Called by [`load_config`]; call it yourself when building a Config in
    /// code.
    pub fn finalize(mut self) -> Result<Config, ConfigError> {
        if let Ok(dir) = std::env::var("AGENTFORGE_WORKSPACE") {
            if !dir.trim().is_empty() {
                self.workspace_dir = PathBuf::from(dir);
            }
        }
        if self.max_parallel_nodes == 0 {
            return Err(ConfigError::Validation {
                field: "max_parallel_nodes".into(),
                message: "must be at least 1".into(),
            });
        }
        for (name, profile) in self.llm_profiles.iter_mut() {
            profile.apply_defaults();
            if let Err((field, message)) = profile.validate() {
                return Err(ConfigError::Validation {
                    field: format!("llm_profiles.{name}.{field}"),
                    message,
                });
            }
        }
        if let Err((field, message)) = self.optimizer.validate() {
            return Err(ConfigError::Validation { field, message });
        }
        for (field, profile) in [
            ("optimizer.executor_profile", &self.optimizer.executor_profile),
            ("optimizer.optimizer_profile", &self.optimizer.optimizer_profile),
        ] {
            if let Some(name) = profile {
                if !self.llm_profiles.contains_key(name) {
                    return Err(ConfigError::Validation {
                        field: field.into(),
                        message: format!("references unknown llm profile {name:?}"),
                    });
                }
            }
        }
        Ok(self)
    }

    pub fn profile(&self, name: &str) -> Option<&LLMConfig> {
        self.llm_profiles.get(name)
    }
}

/// Reads, parses, defaults, and validates a config file. The syntax is picked
/// by extension: `.yaml`/`.yml` or `.json`. An empty document yields the
/// all-defaults config.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ConfigError::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;

    let extension = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let raw: Config = match extension.as_str() {
        "yaml" | "yml" => {
            if text.trim().is_empty() {
                Config::default()
            } else {
                serde_yaml::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.to_path_buf(),
                    line: e.location().map(|l| l.line()).unwrap_or(0),
                    message: e.to_string(),
                })?
            }
        }
        "json" => {
            if text.trim().is_empty() {
                Config::default()
            } else {
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
                    path: path.to_path_buf(),
                    line: e.line(),
                    message: e.to_string(),
                })?
            }
        }
        other => return Err(ConfigError::UnsupportedExtension { extension: other.to_string() }),
    };

    raw.finalize()
}
