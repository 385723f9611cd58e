//! Experiment configuration: one TOML file, optionally overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use diana_core::learner::{TrainConfig, Variant};
use diana_core::streams::StreamConfig;
use serde::{Deserialize, Serialize};

use crate::compare::Expectation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamConfig,
    pub train: TrainConfig,
    /// Variant tags such as `full`, `sequential-finetune` or
    /// `full+no-memory`.
    pub variants: Vec<String>,
    /// Every (variant, seed) pair is one job.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Train and test on a stream exported by `gen-stream` instead of
    /// generating one.
    pub stream_file: Option<PathBuf>,
    /// Keep `stream.seed` for every job. By default each job regenerates the
    /// stream with its own seed.
    pub fixed_stream: bool,
    /// Also log training-time routes, not just final evaluation routes.
    pub log_train_routes: bool,
    /// Orderings checked after the run, e.g. `full.A_N > sequential-finetune.A_N`.
    pub expectations: Vec<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            train: TrainConfig::default(),
            variants: vec!["full".into()],
            seeds: vec![42],
            output_dir: PathBuf::from("runs"),
            stream_file: None,
            fixed_stream: false,
            log_train_routes: false,
            expectations: Vec::new(),
        }
    }
}

/// A config problem, pinned to the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn core_error(prefix: &str, e: diana_core::Error) -> ConfigError {
    match e {
        diana_core::Error::InvalidArgument { field, reason } => {
            ConfigError::new(format!("{prefix}.{field}"), reason)
        }
        other => ConfigError::new(prefix, other),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::new("<toml>", e.message()))?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "<root>".to_string() } else { path };
            ConfigError::new(field, e.inner().message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        if self.variants.is_empty() {
            return Err(ConfigError::new("variants", "at least one variant is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, tag) in self.variants.iter().enumerate() {
            let v = Variant::parse(tag).map_err(|e| ConfigError::new(format!("variants[{i}]"), e))?;
            if !seen.insert(v.tag()) {
                return Err(ConfigError::new(format!("variants[{i}]"), format!("duplicate variant `{}`", v.tag())));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::new("seeds", "duplicate seed"));
        }
        for (i, e) in self.expectations.iter().enumerate() {
            Expectation::parse(e).map_err(|m| ConfigError::new(format!("expectations[{i}]"), m))?;
        }
        self.train.validate().map_err(|e| core_error("train", e))?;
        if self.stream_file.is_none() {
            self.stream.validate().map_err(|e| core_error("stream", e))?;
        }
        Ok(())
    }

    pub fn parsed_variants(&self) -> Vec<Variant> {
        self.variants
            .iter()
            .map(|t| Variant::parse(t).expect("validated"))
            .collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }
}
