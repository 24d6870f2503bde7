//! `harp replay`: prints a replay log and re-runs it to check every record.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use harp_core::deploy::{AssistSession, EpisodeStats, HumanChannel, HumanReply, SessionStatus, VerdictKind};
use harp_core::env::ScenarioConfig;
use harp_service::protocol::proposal_from_wire;
use serde_json::Value;

use crate::checkpoint::{file_digest, Checkpoint};
use crate::error::{CliError, Result};
use crate::logs::{read_log, LoggedAttempt, LoggedSession, Mode, ReplayLine};
use crate::run::Runner;

/// Feeds the logged proposals back to the deployment loop, ending each
/// session the way the log says it ended.
pub struct ReplayChannel {
    sessions: VecDeque<LoggedSession>,
    next_attempt: usize,
}

impl ReplayChannel {
    pub fn new(sessions: Vec<LoggedSession>) -> Self {
        Self {
            sessions: sessions.into(),
            next_attempt: 0,
        }
    }
}

impl HumanChannel for ReplayChannel {
    fn request(&mut self, session: &AssistSession) -> HumanReply {
        let Some(logged) = self.sessions.front().filter(|s| s.id == session.id) else {
            return HumanReply::Abandon;
        };
        if let Some(a) = logged.attempts.get(self.next_attempt) {
            self.next_attempt += 1;
            return match proposal_from_wire(a.groups.clone(), &a.actions) {
                Ok(p) => HumanReply::Propose(p),
                Err(_) => HumanReply::Abandon,
            };
        }
        match logged.note.as_deref() {
            Some("assist timeout") => HumanReply::TimedOut,
            Some("channel disconnected") => HumanReply::Disconnected,
            _ => HumanReply::Abandon,
        }
    }

    fn closed(&mut self, _session: &AssistSession) {
        self.sessions.pop_front();
        self.next_attempt = 0;
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayReport {
    pub mode: Option<Mode>,
    pub episodes: usize,
    pub steps: u64,
    pub sessions: usize,
    /// One entry per diverging episode or summary.
    pub mismatches: Vec<String>,
}

fn signature(groups: &[Vec<usize>]) -> String {
    groups
        .iter()
        .map(|g| format!("[{}]", g.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn verdict_name(v: VerdictKind) -> &'static str {
    match v {
        VerdictKind::Accept => "accept",
        VerdictKind::Reject => "reject",
    }
}

fn print_attempt(out: &mut dyn Write, a: &LoggedAttempt) {
    let sig = signature(&a.groups);
    let _ = match (&a.error, a.verdict, a.proposal_score, a.incumbent_score) {
        (Some(e), ..) => writeln!(out, "    proposal {sig}: invalid ({e})"),
        (None, Some(v), Some(p), Some(i)) => writeln!(out, "    proposal {sig}: {} {p:.4} vs incumbent {i:.4}", verdict_name(v)),
        _ => writeln!(out, "    proposal {sig}: no outcome"),
    };
}

fn print_line(out: &mut dyn Write, line: &ReplayLine) {
    let _ = match line {
        ReplayLine::Header { .. } | ReplayLine::Summary { .. } => Ok(()),
        ReplayLine::RunStart { run } => writeln!(out, "== run {} ==", run + 1),
        ReplayLine::EpisodeStart { episode, env_seed } => writeln!(out, "episode {episode} (seed {env_seed})"),
        ReplayLine::Step {
            t,
            actions,
            reward,
            variance,
            triggered,
            human_actions,
            partition,
            ..
        } => {
            let var = variance.map_or(String::new(), |v| {
                format!("  var {:.4}/{:.4}/{:.3}", v.intra, v.inter, v.combined)
            });
            writeln!(
                out,
                "  t {t:>3}  r {reward:.3}  {}  groups {partition}{var}{}{}",
                actions.join(" "),
                if *triggered { "  TRIGGER" } else { "" },
                if *human_actions { "  (human actions)" } else { "" }
            )
        }
        ReplayLine::Session { session: s, .. } => {
            let _ = writeln!(
                out,
                "  session {} at t {}: incumbent {} score {:.4}",
                s.id, s.t, s.incumbent, s.incumbent_score
            );
            for a in &s.attempts {
                print_attempt(out, a);
            }
            let status = match s.status {
                SessionStatus::Accepted => "accepted",
                SessionStatus::Abandoned => "abandoned",
                SessionStatus::Open => "open",
            };
            match &s.note {
                Some(n) => writeln!(out, "    -> {status} ({n})"),
                None => writeln!(out, "    -> {status}"),
            }
        }
        ReplayLine::EpisodeEnd { episode, stats } => writeln!(
            out,
            "episode {episode}: {} after {} steps, return {:.4}, {} interventions, {} accepted",
            if stats.win { "win" } else { "loss" },
            stats.steps,
            stats.episode_return,
            stats.interventions,
            stats.accepted
        ),
    };
}

fn resolve_checkpoint(recorded: &str, log: &Path, override_path: Option<&Path>) -> PathBuf {
    if let Some(p) = override_path {
        return p.to_path_buf();
    }
    let p = PathBuf::from(recorded);
    if p.is_relative() && !p.exists() {
        if let Some(dir) = log.parent() {
            let beside = dir.join(p.file_name().unwrap_or_default());
            if beside.exists() {
                return beside;
            }
        }
    }
    p
}

fn value_of(line: &ReplayLine) -> Value {
    serde_json::to_value(line).expect("log records serialize")
}

/// Re-runs every logged episode against a fresh deployment and compares the
/// records one by one. Prints the transcript to `out`; divergences are
/// returned in the report and as a [`CliError::Mismatch`].
pub fn cmd_replay(log: &Path, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<ReplayReport> {
    let lines = read_log::<ReplayLine>(log)?;
    let Some((_, ReplayLine::Header {
        mode,
        scenario,
        checkpoint: recorded,
        checkpoint_sha256,
        deploy,
        start_partition,
        ..
    }, _)) = lines.first()
    else {
        return Err(CliError::Log("line 1: the first record must be a header".into()));
    };
    let ckpt_path = resolve_checkpoint(recorded, log, checkpoint);
    if &file_digest(&ckpt_path)? != checkpoint_sha256 {
        return Err(CliError::Checkpoint(format!(
            "{} does not match the checkpoint this log was recorded with",
            ckpt_path.display()
        )));
    }
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let scenario = ScenarioConfig::named(scenario)?;
    let fresh = || Runner::new(&ckpt, &scenario, *deploy, *mode, start_partition.clone());
    let mut runner = fresh()?;

    let mut report = ReplayReport {
        mode: Some(*mode),
        ..ReplayReport::default()
    };
    let mut logged_stats: Vec<EpisodeStats> = Vec::new();
    let mut recomputed_stats: Vec<EpisodeStats> = Vec::new();
    let _ = writeln!(out, "replay of {} ({} mode, {})", log.display(), mode.name(), scenario.name);
    let mut i = 1;
    while i < lines.len() {
        let (lineno, line, _) = &lines[i];
        match line {
            ReplayLine::RunStart { .. } => {
                print_line(out, line);
                runner = fresh()?;
                i += 1;
            }
            ReplayLine::EpisodeStart { episode, env_seed } => {
                let end = lines[i..]
                    .iter()
                    .position(|(_, l, _)| matches!(l, ReplayLine::EpisodeEnd { .. }))
                    .map(|k| i + k)
                    .ok_or_else(|| CliError::Log(format!("line {lineno}: episode {episode} has no episode_end")))?;
                let logged = &lines[i..=end];
                let sessions: Vec<LoggedSession> = logged
                    .iter()
                    .filter_map(|(_, l, _)| match l {
                        ReplayLine::Session { session, .. } => Some(session.clone()),
                        _ => None,
                    })
                    .collect();
                for (_, l, _) in logged {
                    print_line(out, l);
                    if let ReplayLine::EpisodeEnd { stats, .. } = l {
                        logged_stats.push(*stats);
                        report.steps += stats.steps;
                    }
                }
                report.episodes += 1;
                report.sessions += sessions.len();

                let mut channel = ReplayChannel::new(sessions);
                let mut recomputed = Vec::new();
                let ch: Option<&mut dyn HumanChannel> = if mode.assisted() { Some(&mut channel) } else { None };
                let stats = runner.run_episode(*env_seed, ch, &mut |l| recomputed.push(l))?;
                recomputed_stats.push(stats);
                for k in 0..logged.len().max(recomputed.len()) {
                    let want = logged.get(k);
                    let got = recomputed.get(k).map(value_of);
                    if want.map(|(_, _, v)| v) != got.as_ref() {
                        let at = want.map_or(logged[logged.len() - 1].0, |(n, _, _)| *n);
                        let logged_text = want.map_or("nothing".to_string(), |(_, _, v)| v.to_string());
                        let got_text = got.map_or("nothing".to_string(), |v| v.to_string());
                        report.mismatches.push(format!(
                            "line {at}: logged {logged_text} but recomputation gives {got_text}"
                        ));
                        break;
                    }
                }
                i = end + 1;
            }
            ReplayLine::Summary { .. } => {
                let (_, _, logged_value) = &lines[i];
                for (what, stats) in [("logged episodes", &logged_stats), ("recomputation", &recomputed_stats)] {
                    let want = value_of(&ReplayLine::summary(stats));
                    if &want != logged_value {
                        report
                            .mismatches
                            .push(format!("line {lineno}: summary {logged_value} disagrees with {what} {want}"));
                    }
                }
                if let ReplayLine::Summary {
                    episodes,
                    wins,
                    steps,
                    interventions,
                    participation,
                    mean_return,
                } = line
                {
                    let _ = writeln!(
                        out,
                        "summary: {wins}/{episodes} wins, mean return {mean_return:.4}, \
                         {interventions} interventions in {steps} steps ({participation:.2}% participation)"
                    );
                }
                i += 1;
            }
            other => {
                return Err(CliError::Log(format!("line {lineno}: unexpected {} record", other.kind())));
            }
        }
    }
    if report.mismatches.is_empty() {
        let _ = writeln!(
            out,
            "verified: {} episodes, {} steps, {} sessions recomputed identically",
            report.episodes, report.steps, report.sessions
        );
        Ok(report)
    } else {
        for m in &report.mismatches {
            let _ = writeln!(out, "MISMATCH {m}");
        }
        Err(CliError::Mismatch(format!(
            "{} divergence(s); first at {}",
            report.mismatches.len(),
            report.mismatches[0]
        )))
    }
}
