#![allow(dead_code)]

use std::path::{Path, PathBuf};

use harp_cli::train::train_seed;
use harp_cli::{Checkpoint, ExperimentConfig};

/// Config with untrained weights and a cheap evaluation.
pub fn quick_config(scenario: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_scenario(scenario).unwrap();
    cfg.train.steps = 0;
    cfg.train.eval_episodes = 1;
    cfg
}

pub fn untrained(scenario: &str, seed: u64) -> Checkpoint {
    train_seed(&quick_config(scenario), seed, &mut |_| {}).unwrap()
}

pub fn write_checkpoint(dir: &Path, scenario: &str, seed: u64) -> PathBuf {
    let path = dir.join(format!("{scenario}-{seed}.harp"));
    untrained(scenario, seed).save(&path).unwrap();
    path
}
