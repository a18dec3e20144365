use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use distr_core::agent::AgentConfig;
use distr_core::baselines::EwcConfig;
use distr_core::method::{method_names, MethodConfig};
use distr_core::priority::PriorityConfig;
use distr_core::sac::SacConfig;
use distr_core::tasksuite::SuiteConfig;
use distr_core::trajdiff::DiffusionConfig;

/// Any problem with the configuration itself. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    /// Train a fresh single-task SAC per task for forward transfer.
    Train,
    /// Skip forward transfer.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub reference: Reference,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            reference: Reference::Train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub method: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub suite: SuiteConfig,
    pub sac: SacConfig,
    pub diffusion: DiffusionConfig,
    pub agent: AgentConfig,
    pub priority: PriorityConfig,
    pub ewc: EwcConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let m = MethodConfig::default();
        Self {
            method: "distr".into(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("runs/distr"),
            suite: SuiteConfig::default(),
            sac: m.sac,
            diffusion: m.diffusion,
            agent: m.agent,
            priority: m.priority,
            ewc: m.ewc,
            metrics: MetricsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !method_names().contains(&self.method.as_str()) {
            return Err(ConfigError(format!(
                "unknown method `{}`; expected one of {}",
                self.method,
                method_names().join(", ")
            )));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError("seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ConfigError("seeds must be distinct".into()));
        }
        self.suite.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.method_config().validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn method_config(&self) -> MethodConfig {
        MethodConfig {
            sac: self.sac.clone(),
            diffusion: self.diffusion.clone(),
            agent: self.agent.clone(),
            priority: self.priority.clone(),
            ewc: self.ewc.clone(),
        }
    }

    /// Fully expanded TOML; parsing it gives back an equal config.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("experiment config always serializes")
    }
}
