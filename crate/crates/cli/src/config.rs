//! Experiment configuration: one JSON document driving data generation,
//! model construction, training, and evaluation. Unknown keys are rejected.

use relaxconv::datagen::SimConfig;
use relaxconv::eval::NormKind;
use relaxconv::model::ModelSpec;
use relaxconv::train::TrainConfig;
use relaxconv::{Error, Result};
use serde::Deserialize;
use std::path::Path;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

fn default_dtype() -> Dtype {
    Dtype::F32
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_rollout_steps")]
    pub rollout_steps: usize,
    #[serde(default = "default_norm")]
    pub norm: NormKind,
}

fn default_probes() -> usize {
    100
}

fn default_rollout_steps() -> usize {
    20
}

fn default_norm() -> NormKind {
    NormKind::L1
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probes: default_probes(),
            rollout_steps: default_rollout_steps(),
            norm: default_norm(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: Dtype,
    pub data: SimConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.model.validate()?;
        if cfg.train.input_len + cfg.train.unroll > cfg.data.steps {
            return Err(Error::Config(format!(
                "steps {} too short for input_len {} + unroll {}",
                cfg.data.steps, cfg.train.input_len, cfg.train.unroll
            )));
        }
        Ok(cfg)
    }
}
