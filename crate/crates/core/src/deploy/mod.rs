//! Human-assisted deployment.
//!
//! Each step the agents pick greedy actions, the group values of the current
//! partition are computed and the intra/inter-group variance is checked
//! against the trigger history. When the trigger fires the game pauses and an
//! assist session opens: the human channel proposes `(partition, actions)`
//! pairs, each scored by the group critic against the incumbent partition.
//! A proposal that scores strictly higher is executed for that step and its
//! partition is kept; otherwise the session ends by abandon, disconnect or an
//! exhausted retry budget and the greedy actions run.

mod oracle;
mod variance;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{reset, Action, ScenarioConfig, SkirmishState};
use crate::error::{HarpError, Result};
use crate::groupmix::{agent_q_all, group_q_values, masked_argmax, HarpNet};
use crate::grouping::GroupPartition;
use crate::numcore::{GruState, ParameterStore, Tensor};
use crate::pigc::{score_partition, Pigc};

pub use oracle::{kmeans_partition, oracle_actions, silhouette, AbandonChannel, ScriptedOracle};
pub use variance::{
    group_variance, min_max_normalize, participation, raw_variance, should_request_help, BoundedQueue,
    VarianceQueue, VarianceReport, QUEUE_CAPACITY,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeployConfig {
    /// Weight of the normalised intra-group term.
    pub alpha: f64,
    /// Weight of the normalised inter-group term.
    pub beta: f64,
    pub queue_capacity: usize,
    /// Proposals (valid or not) a human may make per session.
    pub retry_budget: usize,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            queue_capacity: QUEUE_CAPACITY,
            retry_budget: 5,
        }
    }
}

impl DeployConfig {
    /// Heterogeneous teams weight inter-group variance more.
    pub fn for_scenario(scenario: &ScenarioConfig) -> Self {
        if scenario.heterogeneous {
            Self {
                alpha: 0.2,
                beta: 0.8,
                ..Self::default()
            }
        } else {
            Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.queue_capacity == 0 || self.retry_budget == 0 {
            return Err(HarpError::Config("queue_capacity and retry_budget must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(HarpError::Config("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// A human's regrouping of the alive agents plus one action per alive agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub partition: GroupPartition,
    pub actions: BTreeMap<usize, Action>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Accepted,
    Abandoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictKind {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub proposal_score: f64,
    pub incumbent_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Scored(Verdict),
    /// Malformed partition or illegal action; never scored.
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub proposal: Proposal,
    pub outcome: AttemptOutcome,
}

/// One paused-game exchange with the human.
#[derive(Debug, Clone, PartialEq)]
pub struct AssistSession {
    pub id: u64,
    pub snapshot: SkirmishState,
    pub masks: Vec<Vec<bool>>,
    /// Incumbent partition over the alive agents.
    pub partition: GroupPartition,
    pub incumbent_score: f64,
    pub report: VarianceReport,
    pub attempts: Vec<Attempt>,
    pub status: SessionStatus,
    hidden: BTreeMap<usize, Tensor<f64>>,
}

impl AssistSession {
    /// Opens a session; `hidden` holds the hidden state of every alive agent
    /// and `partition` may still list dead agents.
    pub fn open(
        id: u64,
        snapshot: SkirmishState,
        partition: &GroupPartition,
        hidden: BTreeMap<usize, Tensor<f64>>,
        report: VarianceReport,
        critic: &Pigc,
        store: &ParameterStore<f64>,
    ) -> Result<Self> {
        let alive = snapshot.alive_allies();
        let incumbent = partition.restrict(&alive);
        let incumbent_score = score_partition(&hidden, &incumbent, critic, store)?;
        Ok(Self {
            id,
            masks: snapshot.legal_masks(),
            snapshot,
            partition: incumbent,
            incumbent_score,
            report,
            attempts: Vec::new(),
            status: SessionStatus::Open,
            hidden,
        })
    }

    pub fn alive_agents(&self) -> Vec<usize> {
        self.snapshot.alive_allies()
    }

    /// Checks the proposal against the frozen snapshot and returns the full
    /// joint action (dead agents get `noop`).
    pub fn validate_proposal(&self, proposal: &Proposal) -> Result<Vec<Action>> {
        let alive = self.alive_agents();
        proposal
            .partition
            .check_covers(&alive)
            .map_err(|e| HarpError::Protocol(format!("invalid partition: {e}")))?;
        let mut joint = Vec::with_capacity(self.masks.len());
        for (agent, mask) in self.masks.iter().enumerate() {
            let a = match proposal.actions.get(&agent) {
                Some(&a) => a,
                None if !alive.contains(&agent) => Action::Noop,
                None => return Err(HarpError::Protocol(format!("no action for agent {agent}"))),
            };
            if a.index() >= mask.len() || !mask[a.index()] {
                return Err(HarpError::Protocol(format!("illegal action {a} for agent {agent}")));
            }
            joint.push(a);
        }
        if let Some(&extra) = proposal.actions.keys().find(|&&a| a >= self.masks.len()) {
            return Err(HarpError::Protocol(format!("no agent {extra}")));
        }
        Ok(joint)
    }

    pub fn abandon(&mut self) {
        if self.status == SessionStatus::Open {
            self.status = SessionStatus::Abandoned;
        }
    }

    /// Proposals still allowed under `budget`.
    pub fn remaining(&self, budget: usize) -> usize {
        budget.saturating_sub(self.attempts.len())
    }
}

/// Scores `proposal` against the incumbent and records the attempt.
///
/// Accepts iff the proposal's critic score is strictly higher; acceptance
/// closes the session. Invalid proposals are recorded and returned as protocol
/// errors without being scored.
pub fn evaluate_proposal(
    session: &mut AssistSession,
    proposal: Proposal,
    critic: &Pigc,
    store: &ParameterStore<f64>,
) -> Result<Verdict> {
    if session.status != SessionStatus::Open {
        return Err(HarpError::Protocol("no open session".into()));
    }
    if let Err(e) = session.validate_proposal(&proposal) {
        let reason = e.to_string();
        session.attempts.push(Attempt {
            proposal,
            outcome: AttemptOutcome::Invalid(reason),
        });
        return Err(e);
    }
    let proposal_score = score_partition(&session.hidden, &proposal.partition, critic, store)?;
    let incumbent_score = session.incumbent_score;
    let verdict = Verdict {
        verdict: if proposal_score > incumbent_score {
            VerdictKind::Accept
        } else {
            VerdictKind::Reject
        },
        proposal_score,
        incumbent_score,
    };
    if verdict.verdict == VerdictKind::Accept {
        session.status = SessionStatus::Accepted;
    }
    session.attempts.push(Attempt {
        proposal,
        outcome: AttemptOutcome::Scored(verdict),
    });
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq)]
pub enum HumanReply {
    Propose(Proposal),
    Abandon,
    /// The channel went away.
    Disconnected,
    /// No reply within the channel's deadline.
    TimedOut,
}

/// What the deployment loop shows the human after every step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepUpdate<'a> {
    pub episode: u64,
    pub t: u32,
    pub state: &'a SkirmishState,
    pub partition: &'a GroupPartition,
    pub report: &'a VarianceReport,
}

/// The human side of an assist session. Calls block the deployment loop.
pub trait HumanChannel {
    /// Next proposal for an open session (first or retry).
    fn request(&mut self, session: &AssistSession) -> HumanReply;

    /// Outcome of the latest attempt.
    fn feedback(&mut self, _session: &AssistSession, _outcome: &AttemptOutcome) {}

    /// The session ended (accepted or abandoned).
    fn closed(&mut self, _session: &AssistSession) {}

    /// State at episode start and after each executed step.
    fn step_update(&mut self, _update: &StepUpdate<'_>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub steps: u64,
    /// Steps on which an assist session opened.
    pub interventions: u64,
    pub accepted: u64,
    pub win: bool,
    #[serde(rename = "return")]
    pub episode_return: f64,
}

/// How a session ended, as recorded in logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: u64,
    pub t: u32,
    pub incumbent: String,
    pub incumbent_score: f64,
    pub attempts: Vec<Attempt>,
    pub status: SessionStatus,
    /// Set when the channel disconnected or the retry budget ran out.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeployEvent {
    Step {
        t: u32,
        actions: Vec<Action>,
        reward: f64,
        report: VarianceReport,
        triggered: bool,
        human_actions: bool,
        partition: String,
    },
    Session(SessionRecord),
    EpisodeEnd(EpisodeStats),
}

/// Deployment state that persists across episodes: parameters, trigger
/// history, the partition each episode starts from and the session counter.
pub struct Deployment<'a> {
    pub net: &'a HarpNet,
    pub store: &'a ParameterStore<f64>,
    pub scenario: ScenarioConfig,
    pub config: DeployConfig,
    pub queue: VarianceQueue,
    pub start_partition: GroupPartition,
    pub next_session: u64,
    pub episodes: u64,
}

impl<'a> Deployment<'a> {
    pub fn new(
        net: &'a HarpNet,
        store: &'a ParameterStore<f64>,
        scenario: ScenarioConfig,
        config: DeployConfig,
        start_partition: GroupPartition,
    ) -> Result<Self> {
        config.validate()?;
        scenario.validate()?;
        start_partition.check_covers(&(0..net.dims.n_agents).collect::<Vec<_>>())?;
        Ok(Self {
            net,
            store,
            scenario,
            queue: VarianceQueue::new(config.queue_capacity),
            config,
            start_partition,
            next_session: 1,
            episodes: 0,
        })
    }

    /// Runs one episode with `channel` as the human.
    pub fn run_episode(
        &mut self,
        env_seed: u64,
        channel: &mut dyn HumanChannel,
        on_event: &mut dyn FnMut(&DeployEvent),
    ) -> Result<EpisodeStats> {
        let net = self.net;
        let n = net.dims.n_agents;
        let agents: Vec<usize> = (0..n).collect();
        let (mut state, mut obs) = reset(&self.scenario, env_seed)?;
        let mut hidden = vec![GruState::zeros(net.agent.hidden_dim()); n];
        let mut partition = self.start_partition.clone();
        let mut stats = EpisodeStats::default();
        self.episodes += 1;
        channel.step_update(&StepUpdate {
            episode: self.episodes,
            t: state.t,
            state: &state,
            partition: &partition,
            report: &VarianceReport::default(),
        });
        loop {
            let masks = state.legal_masks();
            let (qs, next_hidden) = agent_q_all(net, self.store, &obs, &agents, &hidden)?;
            hidden = next_hidden;
            let greedy: Vec<usize> = (0..n)
                .map(|a| masked_argmax(&qs[a], &masks[a]))
                .collect::<Result<_>>()?;

            let alive = state.alive_allies();
            let current = partition.restrict(&alive);
            let hmap: BTreeMap<usize, Tensor<f64>> = alive.iter().map(|&a| (a, hidden[a].hidden.clone())).collect();
            let chosen: BTreeMap<usize, f64> = alive.iter().map(|&a| (a, qs[a][greedy[a]])).collect();
            let gq = group_q_values(net, self.store, &hmap, &current, &chosen)?;
            let report = group_variance(
                &current,
                &chosen,
                &gq.values,
                self.config.alpha,
                self.config.beta,
                &mut self.queue,
            )?;
            let triggered = should_request_help(&report, &mut self.queue);

            let mut joint: Vec<Action> = greedy.iter().map(|&u| Action::from_index(u)).collect();
            let mut human_actions = false;
            if triggered {
                stats.interventions += 1;
                let id = self.next_session;
                self.next_session += 1;
                let mut session =
                    AssistSession::open(id, state.clone(), &partition, hmap, report, &net.critic, self.store)?;
                let mut note = None;
                while session.status == SessionStatus::Open {
                    if session.remaining(self.config.retry_budget) == 0 {
                        note = Some("retry budget exhausted".to_string());
                        session.abandon();
                        break;
                    }
                    match channel.request(&session) {
                        HumanReply::Propose(p) => {
                            let outcome = match evaluate_proposal(&mut session, p, &net.critic, self.store) {
                                Ok(v) => AttemptOutcome::Scored(v),
                                Err(HarpError::Protocol(m)) => AttemptOutcome::Invalid(m),
                                Err(e) => return Err(e),
                            };
                            channel.feedback(&session, &outcome);
                        }
                        HumanReply::Abandon => session.abandon(),
                        HumanReply::Disconnected => {
                            note = Some("channel disconnected".to_string());
                            session.abandon();
                        }
                        HumanReply::TimedOut => {
                            note = Some("assist timeout".to_string());
                            session.abandon();
                        }
                    }
                }
                if session.status == SessionStatus::Accepted {
                    let accepted = &session.attempts.last().expect("accepted attempt").proposal;
                    joint = session.validate_proposal(accepted)?;
                    partition = accepted.partition.with_trailing(&agents);
                    human_actions = true;
                    stats.accepted += 1;
                }
                channel.closed(&session);
                on_event(&DeployEvent::Session(SessionRecord {
                    id,
                    t: state.t,
                    incumbent: session.partition.to_string(),
                    incumbent_score: session.incumbent_score,
                    attempts: session.attempts.clone(),
                    status: session.status,
                    note,
                }));
            }

            let t = state.t;
            let tr = state.step(&joint)?;
            stats.steps += 1;
            stats.episode_return += tr.reward;
            on_event(&DeployEvent::Step {
                t,
                actions: joint,
                reward: tr.reward,
                report,
                triggered,
                human_actions,
                partition: partition.to_string(),
            });
            channel.step_update(&StepUpdate {
                episode: self.episodes,
                t: tr.next.t,
                state: &tr.next,
                partition: &partition,
                report: &report,
            });
            obs = tr.observations;
            state = tr.next;
            if tr.terminated {
                stats.win = tr.win;
                break;
            }
        }
        on_event(&DeployEvent::EpisodeEnd(stats));
        Ok(stats)
    }
}

/// Single-episode convenience wrapper around [`Deployment`] with a fresh trigger history.
pub fn run_deployment(
    net: &HarpNet,
    store: &ParameterStore<f64>,
    scenario: &ScenarioConfig,
    env_seed: u64,
    human: &mut dyn HumanChannel,
    config: DeployConfig,
) -> Result<EpisodeStats> {
    let mut d = Deployment::new(net, store, scenario.clone(), config, GroupPartition::single(net.dims.n_agents))?;
    d.run_episode(env_seed, human, &mut |_| {})
}

#[cfg(test)]
mod tests;
