//! `harp evaluate` and `harp deploy`.

use std::io::Write;
use std::path::Path;

use harp_core::deploy::{DeployConfig, EpisodeStats, HumanChannel, ScriptedOracle};
use harp_core::env::ScenarioConfig;
use harp_core::grouping::GroupPartition;

use crate::checkpoint::{file_digest, Checkpoint};
use crate::config::{EvalProtocol, ExperimentConfig};
use crate::error::Result;
use crate::logs::{LogWriter, MetricsLine, MetricsRecord, Mode, ReplayLine};
use crate::run::Runner;

/// Parameters and settings shared by every episode of one command.
pub struct Setup<'a> {
    pub ckpt: &'a Checkpoint,
    pub scenario: ScenarioConfig,
    pub deploy: DeployConfig,
    pub start: GroupPartition,
}

impl<'a> Setup<'a> {
    /// Checks the checkpoint against the scenario; deployment starts from the
    /// partition the checkpoint was trained with.
    pub fn new(ckpt: &'a Checkpoint, cfg: &ExperimentConfig) -> Result<Self> {
        let scenario = cfg.scenario_config()?;
        ckpt.check_scenario(&scenario)?;
        Ok(Self {
            ckpt,
            scenario,
            deploy: cfg.deploy_config()?,
            start: ckpt.meta.partition.clone(),
        })
    }

    pub fn runner(&self, mode: Mode) -> Result<Runner<'a>> {
        Runner::new(self.ckpt, &self.scenario, self.deploy, mode, self.start.clone())
    }
}

/// Writes the replay header for a run over `ckpt_path`.
pub fn write_header(
    replay: &mut LogWriter,
    setup: &Setup<'_>,
    mode: Mode,
    ckpt_path: &Path,
    cfg: &ExperimentConfig,
) -> Result<()> {
    replay.write(&ReplayLine::Header {
        mode,
        scenario: setup.scenario.name.clone(),
        checkpoint: ckpt_path.display().to_string(),
        checkpoint_sha256: file_digest(ckpt_path)?,
        deploy: setup.deploy,
        start_partition: setup.start.clone(),
        config: cfg.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub repeats: Vec<MetricsRecord>,
    pub pooled: MetricsRecord,
    pub episodes: Vec<EpisodeStats>,
}

/// Seed of episode `i` of repeat `r`: repeats use disjoint consecutive blocks.
pub fn episode_seed(first_seed: u64, protocol: &EvalProtocol, repeat: usize, i: usize) -> u64 {
    first_seed + (repeat * protocol.episodes_per_eval + i) as u64
}

fn note_partitions(seen: &mut Vec<String>, line: &ReplayLine) {
    if let ReplayLine::Step { partition, .. } = line {
        if !seen.contains(partition) {
            seen.push(partition.clone());
        }
    }
}

/// Runs `protocol.repeats` deployments of `protocol.episodes_per_eval`
/// episodes each. Oracle mode gives every episode a fresh scripted oracle;
/// the trigger history persists within a repeat.
pub fn run_evaluation(
    setup: &Setup<'_>,
    mode: Mode,
    protocol: &EvalProtocol,
    first_seed: u64,
    metrics: &mut LogWriter,
    replay: &mut LogWriter,
) -> Result<EvalOutcome> {
    let mut repeats = Vec::new();
    let mut all = Vec::new();
    let mut all_partitions = Vec::new();
    for r in 0..protocol.repeats {
        replay.write(&ReplayLine::RunStart { run: r })?;
        let mut runner = setup.runner(mode)?;
        let mut stats = Vec::new();
        let mut partitions = Vec::new();
        for i in 0..protocol.episodes_per_eval {
            let env_seed = episode_seed(first_seed, protocol, r, i);
            let mut oracle = ScriptedOracle::new();
            let channel: Option<&mut dyn HumanChannel> = match mode {
                Mode::Greedy => None,
                _ => Some(&mut oracle),
            };
            let mut failure = None;
            let s = runner.run_episode(env_seed, channel, &mut |line| {
                note_partitions(&mut partitions, &line);
                if let Err(e) = replay.write(&line) {
                    failure.get_or_insert(e);
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            metrics.write(&MetricsLine::Episode {
                repeat: r,
                episode: runner.episodes(),
                env_seed,
                stats: s,
            })?;
            stats.push(s);
        }
        for p in &partitions {
            if !all_partitions.contains(p) {
                all_partitions.push(p.clone());
            }
        }
        let rec = MetricsRecord::from_episodes(
            &setup.scenario.name,
            mode,
            setup.ckpt.meta.train_seed,
            Some(r),
            &stats,
            partitions,
        );
        metrics.write(&MetricsLine::Eval(rec.clone()))?;
        repeats.push(rec);
        all.extend(stats);
    }
    let pooled = MetricsRecord::from_episodes(
        &setup.scenario.name,
        mode,
        setup.ckpt.meta.train_seed,
        None,
        &all,
        all_partitions,
    );
    metrics.write(&MetricsLine::Eval(pooled.clone()))?;
    replay.write(&ReplayLine::summary(&all))?;
    Ok(EvalOutcome {
        repeats,
        pooled,
        episodes: all,
    })
}

/// Progress line for one finished episode.
pub fn episode_line(out: &mut dyn Write, episode: u64, env_seed: u64, s: &EpisodeStats) {
    let _ = writeln!(
        out,
        "episode {episode} (seed {env_seed}): {} in {} steps, return {:.2}, {} interventions, {} accepted",
        if s.win { "win" } else { "loss" },
        s.steps,
        s.episode_return,
        s.interventions,
        s.accepted
    );
}
