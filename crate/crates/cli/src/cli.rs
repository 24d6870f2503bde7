//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use harp_core::groupmix::EVAL_SEED_OFFSET;
use harp_service::{ServeConfig, Server};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::evaluate::{episode_line, run_evaluation, write_header, Setup};
use crate::logs::{LogWriter, MetricsLine, MetricsRecord, Mode, ReplayLine};
use crate::replay::cmd_replay;
use crate::table::format_table;
use crate::train::cmd_train;

#[derive(Debug, Parser)]
#[command(name = "harp", version, about = "Dynamic grouping, group critic and human-assisted deployment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run per configured seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint greedily or with the scripted oracle assisting.
    Evaluate(EvaluateArgs),
    /// Serve a live deployment to one operator over WebSocket.
    Deploy(DeployArgs),
    /// Print a replay log and verify it by recomputation.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for checkpoints and metrics.ndjson.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Experiment config; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's scenario.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: Mode,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub episodes_per_eval: Option<usize>,
    /// Environment seed of the first episode.
    #[arg(long, default_value_t = EVAL_SEED_OFFSET)]
    pub first_seed: u64,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub replay_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeployArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub bind: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seconds a session waits for each operator reply.
    #[arg(long, default_value_t = 30.0)]
    pub assist_timeout_s: f64,
    #[arg(long, default_value_t = 1)]
    pub episodes: u64,
    #[arg(long, default_value_t = EVAL_SEED_OFFSET)]
    pub first_seed: u64,
    /// Pause after every streamed step.
    #[arg(long, default_value_t = 0)]
    pub step_delay_ms: u64,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub replay_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub log: PathBuf,
    /// Checkpoint to use instead of the one recorded in the log header.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn experiment(config: Option<&Path>, scenario: Option<&str>, ckpt: &Checkpoint) -> Result<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_scenario(scenario.unwrap_or(&ckpt.meta.scenario))?,
    };
    if let Some(s) = scenario {
        if s != cfg.scenario {
            cfg.scenario = s.to_string();
            cfg.deploy = None;
            cfg = cfg.resolve()?;
        }
    }
    Ok(cfg)
}

fn writer(path: Option<&Path>) -> Result<LogWriter> {
    path.map_or_else(|| Ok(LogWriter::sink()), LogWriter::create)
}

pub fn evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<MetricsRecord> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = experiment(args.config.as_deref(), args.scenario.as_deref(), &ckpt)?;
    if let Some(r) = args.repeats {
        cfg.eval.repeats = r;
    }
    if let Some(e) = args.episodes_per_eval {
        cfg.eval.episodes_per_eval = e;
    }
    let cfg = cfg.resolve()?;
    let setup = Setup::new(&ckpt, &cfg)?;
    let mut metrics = writer(args.metrics.as_deref())?;
    let mut replay = writer(args.replay_log.as_deref())?;
    metrics.write(&MetricsLine::Config {
        command: format!("evaluate {}", args.mode.name()),
        config: cfg.clone(),
    })?;
    write_header(&mut replay, &setup, args.mode, &args.checkpoint, &cfg)?;
    let outcome = run_evaluation(&setup, args.mode, &cfg.eval, args.first_seed, &mut metrics, &mut replay)?;
    let _ = write!(out, "{}", format_table(&outcome.repeats, &outcome.pooled));
    Ok(outcome.pooled)
}

pub fn deploy(args: &DeployArgs, out: &mut dyn Write) -> Result<MetricsRecord> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = experiment(args.config.as_deref(), args.scenario.as_deref(), &ckpt)?;
    if !(args.assist_timeout_s.is_finite() && args.assist_timeout_s >= 0.0) {
        return Err(CliError::Config("--assist-timeout-s must be a non-negative number".into()));
    }
    let setup = Setup::new(&ckpt, &cfg)?;
    let mut metrics = writer(args.metrics.as_deref())?;
    let mut replay = writer(args.replay_log.as_deref())?;
    metrics.write(&MetricsLine::Config {
        command: "deploy".into(),
        config: cfg.clone(),
    })?;
    write_header(&mut replay, &setup, Mode::Service, &args.checkpoint, &cfg)?;
    replay.write(&ReplayLine::RunStart { run: 0 })?;

    let server = Server::bind(&args.bind).map_err(|e| CliError::Io {
        context: format!("bind {}", args.bind),
        source: e,
    })?;
    let _ = writeln!(out, "listening on ws://{}", server.local_addr());
    let _ = out.flush();
    let mut channel = server.channel(ServeConfig {
        assist_timeout: Duration::from_secs_f64(args.assist_timeout_s),
        step_delay: Duration::from_millis(args.step_delay_ms),
        retry_budget: setup.deploy.retry_budget,
    });

    let mut runner = setup.runner(Mode::Service)?;
    let mut all = Vec::new();
    let mut partitions: Vec<String> = Vec::new();
    for i in 0..args.episodes {
        let env_seed = args.first_seed + i;
        let mut failure = None;
        let stats = runner.run_episode(env_seed, Some(&mut channel), &mut |line| {
            if let ReplayLine::Step { partition, .. } = &line {
                if !partitions.contains(partition) {
                    partitions.push(partition.clone());
                }
            }
            if let Err(e) = replay.write(&line) {
                failure.get_or_insert(e);
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        metrics.write(&MetricsLine::Episode {
            repeat: 0,
            episode: runner.episodes(),
            env_seed,
            stats,
        })?;
        episode_line(out, runner.episodes(), env_seed, &stats);
        all.push(stats);
    }
    channel.shutdown();
    let record = MetricsRecord::from_episodes(
        &setup.scenario.name,
        Mode::Service,
        ckpt.meta.train_seed,
        Some(0),
        &all,
        partitions,
    );
    metrics.write(&MetricsLine::Eval(record.clone()))?;
    replay.write(&ReplayLine::summary(&all))?;
    let _ = write!(out, "{}", format_table(std::slice::from_ref(&record), &record));
    Ok(record)
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => {
            let cfg = ExperimentConfig::load(&a.config)?;
            cmd_train(&cfg, &a.out, out)?;
        }
        Command::Evaluate(a) => {
            evaluate(a, out)?;
        }
        Command::Deploy(a) => {
            deploy(a, out)?;
        }
        Command::Replay(a) => {
            cmd_replay(&a.log, a.checkpoint.as_deref(), out)?;
        }
    }
    Ok(())
}
