//! Experiment configuration, read from TOML.
//!
//! ```toml
//! scenario = "5v6"
//! seeds = [0, 1, 2]
//!
//! [train]
//! steps = 20000
//! lambda = 0.1
//!
//! [deploy]
//! queue_capacity = 10
//!
//! [eval]
//! episodes_per_eval = 31
//! repeats = 5
//! ```
//!
//! Every section and key is optional except `scenario`. Unknown keys are
//! rejected. `[deploy]` defaults depend on the scenario (heterogeneous teams
//! weight inter-group variance more).

use std::path::Path;

use harp_core::deploy::DeployConfig;
use harp_core::env::ScenarioConfig;
use harp_core::groupmix::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Evaluation protocol: `repeats` independent runs of `episodes_per_eval` episodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalProtocol {
    pub episodes_per_eval: usize,
    pub repeats: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            episodes_per_eval: 31,
            repeats: 5,
        }
    }
}

impl EvalProtocol {
    pub fn total_episodes(&self) -> usize {
        self.episodes_per_eval * self.repeats
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub net: NetConfig,
    /// `None` until resolved against the scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deploy: Option<DeployConfig>,
    #[serde(default)]
    pub eval: EvalProtocol,
}

impl ExperimentConfig {
    /// Defaults for `scenario`, already resolved.
    pub fn for_scenario(scenario: &str) -> Result<Self> {
        Self {
            scenario: scenario.to_string(),
            seeds: default_seeds(),
            train: TrainConfig::default(),
            net: NetConfig::default(),
            deploy: None,
            eval: EvalProtocol::default(),
        }
        .resolve()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: Self = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        raw.resolve()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills scenario-dependent defaults and validates every section.
    pub fn resolve(mut self) -> Result<Self> {
        let scenario = ScenarioConfig::named(&self.scenario)?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.eval.episodes_per_eval == 0 || self.eval.repeats == 0 {
            return Err(CliError::Config("eval.episodes_per_eval and eval.repeats must be positive".into()));
        }
        self.train.validate()?;
        let deploy = self.deploy.unwrap_or_else(|| DeployConfig::for_scenario(&scenario));
        deploy.validate()?;
        self.deploy = Some(deploy);
        Ok(self)
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        Ok(ScenarioConfig::named(&self.scenario)?)
    }

    pub fn deploy_config(&self) -> Result<DeployConfig> {
        match self.deploy {
            Some(d) => Ok(d),
            None => Ok(DeployConfig::for_scenario(&self.scenario_config()?)),
        }
    }

    /// The resolved config as TOML, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
