//! Newline-delimited JSON logs: metrics and deployment replays.
//!
//! Every line is one object carrying `schema_version` and a `kind` tag.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use harp_core::deploy::{
    Attempt, AttemptOutcome, DeployConfig, EpisodeStats, SessionRecord, SessionStatus, VarianceReport, VerdictKind,
};
use harp_core::grouping::GroupPartition;
use harp_service::ActionSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Argmax actions, no assistance.
    Greedy,
    /// Assisted deployment with the scripted oracle as the human.
    #[value(name = "oracle_assist")]
    OracleAssist,
    /// Assisted deployment with a live operator over the network.
    #[value(skip)]
    Service,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Greedy => "greedy",
            Mode::OracleAssist => "oracle_assist",
            Mode::Service => "service",
        }
    }

    pub fn assisted(self) -> bool {
        self != Mode::Greedy
    }
}

/// Win rate in percent with one decimal, rounded half up.
pub fn win_rate_pct(wins: usize, episodes: usize) -> f64 {
    if episodes == 0 {
        return 0.0;
    }
    let tenths = (2000 * wins as u64 + episodes as u64) / (2 * episodes as u64);
    tenths as f64 / 10.0
}

/// Human interventions per step, in percent.
pub fn participation_pct(interventions: u64, steps: u64) -> f64 {
    if steps == 0 {
        return 0.0;
    }
    interventions as f64 * 100.0 / steps as f64
}

/// One evaluation: a training checkpoint's periodic greedy test or one
/// repeat (or the pooled total) of `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub mode: Mode,
    /// Training seed of the evaluated parameters.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_steps: Option<u64>,
    /// `None` for training-time evaluations and pooled totals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub steps: u64,
    pub interventions: u64,
    pub participation: f64,
    /// Partition signatures in effect, first appearance order.
    pub partitions: Vec<String>,
}

impl MetricsRecord {
    /// Aggregates per-episode stats.
    pub fn from_episodes(
        scenario: &str,
        mode: Mode,
        seed: u64,
        repeat: Option<usize>,
        episodes: &[EpisodeStats],
        partitions: Vec<String>,
    ) -> Self {
        let wins = episodes.iter().filter(|e| e.win).count();
        let steps = episodes.iter().map(|e| e.steps).sum();
        let interventions = episodes.iter().map(|e| e.interventions).sum();
        let total: f64 = episodes.iter().map(|e| e.episode_return).sum();
        Self {
            scenario: scenario.to_string(),
            mode,
            seed,
            env_steps: None,
            repeat,
            episodes: episodes.len(),
            wins,
            win_rate: win_rate_pct(wins, episodes.len()),
            mean_return: if episodes.is_empty() { 0.0 } else { total / episodes.len() as f64 },
            steps,
            interventions,
            participation: participation_pct(interventions, steps),
            partitions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsLine {
    /// Fully resolved config of the run, defaults included.
    Config { command: String, config: ExperimentConfig },
    Train {
        seed: u64,
        episode: u64,
        env_steps: u64,
        #[serde(rename = "return")]
        episode_return: f64,
        win: bool,
        epsilon: f64,
        partition: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        td_loss: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        critic_l2: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grad_norm: Option<f64>,
    },
    Eval(MetricsRecord),
    Episode {
        repeat: usize,
        episode: u64,
        env_seed: u64,
        stats: EpisodeStats,
    },
}

/// One proposal as logged: the wire shape plus its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedAttempt {
    pub groups: Vec<Vec<usize>>,
    pub actions: Vec<ActionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent_score: Option<f64>,
    /// Why the proposal was refused without scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<&Attempt> for LoggedAttempt {
    fn from(a: &Attempt) -> Self {
        let (verdict, proposal_score, incumbent_score, error) = match &a.outcome {
            AttemptOutcome::Scored(v) => (Some(v.verdict), Some(v.proposal_score), Some(v.incumbent_score), None),
            AttemptOutcome::Invalid(m) => (None, None, None, Some(m.clone())),
        };
        Self {
            groups: a.proposal.partition.groups().to_vec(),
            actions: a.proposal.actions.iter().map(|(&agent, &act)| ActionSpec::new(agent, act)).collect(),
            verdict,
            proposal_score,
            incumbent_score,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSession {
    pub id: u64,
    pub t: u32,
    pub incumbent: String,
    pub incumbent_score: f64,
    pub attempts: Vec<LoggedAttempt>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl From<&SessionRecord> for LoggedSession {
    fn from(s: &SessionRecord) -> Self {
        Self {
            id: s.id,
            t: s.t,
            incumbent: s.incumbent.clone(),
            incumbent_score: s.incumbent_score,
            attempts: s.attempts.iter().map(LoggedAttempt::from).collect(),
            status: s.status,
            note: s.note.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplayLine {
    Header {
        mode: Mode,
        scenario: String,
        checkpoint: String,
        checkpoint_sha256: String,
        deploy: DeployConfig,
        start_partition: GroupPartition,
        config: ExperimentConfig,
    },
    /// A fresh deployment begins: the trigger history and session ids reset.
    RunStart { run: usize },
    EpisodeStart { episode: u64, env_seed: u64 },
    Step {
        episode: u64,
        t: u32,
        actions: Vec<String>,
        reward: f64,
        /// Absent in greedy runs.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variance: Option<VarianceReport>,
        triggered: bool,
        human_actions: bool,
        partition: String,
    },
    Session { episode: u64, session: LoggedSession },
    EpisodeEnd { episode: u64, stats: EpisodeStats },
    Summary {
        episodes: usize,
        wins: usize,
        steps: u64,
        interventions: u64,
        participation: f64,
        mean_return: f64,
    },
}

impl ReplayLine {
    pub fn kind(&self) -> &'static str {
        match self {
            ReplayLine::Header { .. } => "header",
            ReplayLine::RunStart { .. } => "run_start",
            ReplayLine::EpisodeStart { .. } => "episode_start",
            ReplayLine::Step { .. } => "step",
            ReplayLine::Session { .. } => "session",
            ReplayLine::EpisodeEnd { .. } => "episode_end",
            ReplayLine::Summary { .. } => "summary",
        }
    }

    pub fn summary(episodes: &[EpisodeStats]) -> Self {
        let steps = episodes.iter().map(|e| e.steps).sum();
        let interventions = episodes.iter().map(|e| e.interventions).sum();
        let total: f64 = episodes.iter().map(|e| e.episode_return).sum();
        ReplayLine::Summary {
            episodes: episodes.len(),
            wins: episodes.iter().filter(|e| e.win).count(),
            steps,
            interventions,
            participation: participation_pct(interventions, steps),
            mean_return: if episodes.is_empty() { 0.0 } else { total / episodes.len() as f64 },
        }
    }
}

/// Serializes `record` as one log line (no trailing newline).
pub fn to_line<T: Serialize>(record: &T) -> String {
    let mut v = serde_json::to_value(record).expect("log records serialize");
    if let Value::Object(map) = &mut v {
        map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    }
    v.to_string()
}

/// Parses one line, checking `schema_version`. Errors carry the 1-based line number.
pub fn parse_line<T: for<'de> Deserialize<'de>>(text: &str, lineno: usize) -> Result<(T, Value)> {
    let err = |m: String| CliError::Log(format!("line {lineno}: {m}"));
    let mut v: Value = serde_json::from_str(text).map_err(|e| err(format!("not valid JSON ({e})")))?;
    let map = v.as_object_mut().ok_or_else(|| err("not a JSON object".into()))?;
    match map.remove("schema_version").and_then(|s| s.as_u64()) {
        Some(s) if s == u64::from(SCHEMA_VERSION) => {}
        Some(s) => return Err(err(format!("unsupported schema_version {s}"))),
        None => return Err(err("missing schema_version".into())),
    }
    let record = T::deserialize(&v).map_err(|e| err(e.to_string()))?;
    Ok((record, v))
}

/// Reads a whole log; blank lines are skipped.
pub fn read_log<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T, Value)>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::Log(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let (record, value) = parse_line(&line, i + 1)?;
        out.push((i + 1, record, value));
    }
    Ok(out)
}

/// Line-buffered NDJSON writer; each record is flushed as it is written.
pub struct LogWriter {
    out: Box<dyn Write>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(Self {
            out: Box::new(BufWriter::new(f)),
        })
    }

    /// Discards everything.
    pub fn sink() -> Self {
        Self {
            out: Box::new(std::io::sink()),
        }
    }

    pub fn from_writer(out: Box<dyn Write>) -> Self {
        Self { out }
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let io = |e| CliError::Log(format!("write failed: {e}"));
        writeln!(self.out, "{}", to_line(record)).map_err(io)?;
        self.out.flush().map_err(io)
    }
}
