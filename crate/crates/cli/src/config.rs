//! Run configuration files.

use std::path::{Path, PathBuf};

use mde_core::montecarlo::{Experiment, ExperimentConfig};
use mde_core::{LambdaRule, OptimizerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Configuration format understood by this build.
pub const CONFIG_VERSION: u32 = 1;

/// Default number of limit-law draws for `limit` and `compare`.
pub const DEFAULT_N_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: String,
    pub theta_star: Vec<f64>,
    pub eps_list: Vec<f64>,
    pub reps: usize,
    pub gamma: f64,
    pub lambda_rule: LambdaRule,
    pub n_steps: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub paper_literal_gamma1: bool,
    /// Draws of `argmin V` for `limit` and `compare`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::Config(e.inner().to_string())
            } else {
                CliError::Config(format!("{path}: {}", e.inner()))
            }
        })?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "version: unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        if cfg.n_limit == Some(0) {
            return Err(CliError::Config("n_limit: must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            theta_star: self.theta_star.clone(),
            eps_list: self.eps_list.clone(),
            reps: self.reps,
            gamma: self.gamma,
            lambda_rule: self.lambda_rule,
            n_steps: self.n_steps,
            base_seed: self.base_seed,
            optimizer: self.optimizer,
            paper_literal_gamma1: self.paper_literal_gamma1,
        }
    }

    /// Resolves the experiment; every failure here is a configuration error.
    pub fn experiment(&self, allow_zero_eps: bool) -> Result<Experiment, CliError> {
        Experiment::new(&self.experiment_config(), allow_zero_eps).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn single_eps(&self) -> Result<f64, CliError> {
        match self.eps_list.as_slice() {
            [e] => Ok(*e),
            _ => Err(CliError::Config(format!(
                "eps_list: this command needs exactly one noise level, got {}",
                self.eps_list.len()
            ))),
        }
    }

    pub fn n_limit(&self) -> usize {
        self.n_limit.unwrap_or(DEFAULT_N_LIMIT)
    }
}
