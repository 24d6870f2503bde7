//! `harp train`: one training run per configured seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use harp_core::groupmix::{TrainEvent, Trainer};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::logs::{win_rate_pct, LogWriter, MetricsLine, MetricsRecord, Mode};

fn train_line(seed: u64, ev: &TrainEvent, scenario: &str) -> MetricsLine {
    match ev {
        TrainEvent::Episode {
            episode,
            env_steps,
            episode_return,
            win,
            epsilon,
            partition,
            loss,
        } => MetricsLine::Train {
            seed,
            episode: *episode,
            env_steps: *env_steps,
            episode_return: *episode_return,
            win: *win,
            epsilon: *epsilon,
            partition: partition.clone(),
            td_loss: loss.as_ref().map(|l| l.td_loss),
            critic_l2: loss.as_ref().map(|l| l.critic_l2),
            grad_norm: loss.as_ref().map(|l| l.grad_norm),
        },
        TrainEvent::Eval(e) => MetricsLine::Eval(MetricsRecord {
            scenario: scenario.to_string(),
            mode: Mode::Greedy,
            seed,
            env_steps: Some(e.env_steps),
            repeat: None,
            episodes: e.episodes,
            wins: e.wins,
            win_rate: win_rate_pct(e.wins, e.episodes),
            mean_return: e.mean_return,
            steps: 0,
            interventions: 0,
            participation: 0.0,
            partitions: vec![e.partition.clone()],
        }),
    }
}

/// Trains one seed, streaming episode and evaluation records to `on_line`.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, on_line: &mut dyn FnMut(MetricsLine)) -> Result<Checkpoint> {
    let scenario = cfg.scenario_config()?;
    let mut trainer = Trainer::new(scenario, cfg.net, cfg.train.clone(), seed)?;
    trainer.run(|ev| on_line(train_line(seed, ev, &cfg.scenario)))?;
    if trainer.store.iter().any(|p| !p.value.is_finite()) {
        return Err(CliError::Numeric(format!("seed {seed}: parameters became non-finite")));
    }
    let meta = CheckpointMeta {
        scenario: cfg.scenario.clone(),
        dims: trainer.net.dims,
        net: cfg.net,
        partition: trainer.partition.clone(),
        train_seed: seed,
        env_steps: trainer.env_steps,
    };
    Ok(Checkpoint::new(meta, trainer.net, trainer.store))
}

pub fn checkpoint_path(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}.harp"))
}

/// Trains every seed in order, writing `seed-<s>.harp` checkpoints and
/// `metrics.ndjson` into `out_dir`. Returns the final evaluation per seed.
pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<MetricsRecord>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut metrics = LogWriter::create(&out_dir.join("metrics.ndjson"))?;
    metrics.write(&MetricsLine::Config {
        command: "train".into(),
        config: cfg.clone(),
    })?;
    let mut finals = Vec::new();
    for &seed in &cfg.seeds {
        let mut last = None;
        let mut failure = None;
        let ckpt = train_seed(cfg, seed, &mut |line| {
            if let MetricsLine::Eval(r) = &line {
                let _ = writeln!(
                    out,
                    "seed {seed} step {:>6}: win rate {:5.1}%  mean return {:6.2}  groups {}",
                    r.env_steps.unwrap_or(0),
                    r.win_rate,
                    r.mean_return,
                    r.partitions.join(" | ")
                );
                last = Some(r.clone());
            }
            if let Err(e) = metrics.write(&line) {
                failure.get_or_insert(e);
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        let path = checkpoint_path(out_dir, seed);
        ckpt.save(&path)?;
        let _ = writeln!(out, "seed {seed}: wrote {}", path.display());
        finals.extend(last);
    }
    Ok(finals)
}
