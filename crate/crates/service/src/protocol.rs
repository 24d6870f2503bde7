//! Wire messages. Every frame is one JSON object tagged by `kind`.

use std::collections::BTreeMap;

use harp_core::deploy::{AssistSession, Proposal, VarianceReport, VerdictKind};
use harp_core::env::{Action, SkirmishState, Team, Unit, UnitKind};
use harp_core::grouping::{partition_signature, GroupPartition};
use harp_core::HarpError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitView {
    pub id: usize,
    pub team: Team,
    pub unit_type: UnitKind,
    pub x: i32,
    pub y: i32,
    pub health_pct: f64,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceView {
    pub intra: f64,
    pub inter: f64,
    pub combined: f64,
}

impl From<&VarianceReport> for VarianceView {
    fn from(r: &VarianceReport) -> Self {
        Self {
            intra: r.intra,
            inter: r.inter,
            combined: r.combined,
        }
    }
}

/// One action as it travels on the wire; `target` only for `attack`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub agent: usize,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl ActionSpec {
    pub fn new(agent: usize, action: Action) -> Self {
        Self {
            agent,
            action: action.name().to_string(),
            target: action.target(),
        }
    }
}

/// Legal choices of one alive agent in the frozen snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegalActions {
    pub agent: usize,
    pub actions: Vec<ActionSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseOutcome {
    Accepted,
    Abandoned,
    Timeout,
    Disconnected,
    RetryBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub episode: u64,
    pub t: u32,
    pub units: Vec<UnitView>,
    pub partition: String,
    pub variance: VarianceView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    StateUpdate {
        session: Option<u64>,
        #[serde(flatten)]
        state: StatePayload,
    },
    AssistRequest {
        session: u64,
        #[serde(flatten)]
        state: StatePayload,
        incumbent_score: f64,
        legal: Vec<LegalActions>,
        retry_budget: usize,
    },
    Verdict {
        session: u64,
        verdict: VerdictKind,
        proposal_score: f64,
        incumbent_score: f64,
    },
    SessionClosed {
        session: u64,
        outcome: CloseOutcome,
    },
    Error {
        session: Option<u64>,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Proposal {
        session: u64,
        groups: Vec<Vec<usize>>,
        actions: Vec<ActionSpec>,
    },
    Abandon {
        session: u64,
    },
}

impl ClientMessage {
    pub fn session(&self) -> u64 {
        match self {
            ClientMessage::Proposal { session, .. } | ClientMessage::Abandon { session } => *session,
        }
    }
}

/// Health as a percentage with one decimal, rounded half up.
pub fn health_pct(health: u32, max_health: u32) -> f64 {
    if max_health == 0 {
        return 0.0;
    }
    let tenths = (2000 * u64::from(health) + u64::from(max_health)) / (2 * u64::from(max_health));
    tenths as f64 / 10.0
}

fn unit_view(u: &Unit) -> UnitView {
    UnitView {
        id: u.id,
        team: u.team,
        unit_type: u.kind,
        x: u.pos.0,
        y: u.pos.1,
        health_pct: if u.alive { health_pct(u.health, u.max_health) } else { 0.0 },
        alive: u.alive,
    }
}

/// What a `state_update` carries for `state`.
pub fn snapshot_payload(
    episode: u64,
    state: &SkirmishState,
    partition: &GroupPartition,
    report: &VarianceReport,
) -> StatePayload {
    StatePayload {
        episode,
        t: state.t,
        units: state.allies.iter().chain(&state.enemies).map(unit_view).collect(),
        partition: partition_signature(partition),
        variance: report.into(),
    }
}

pub fn legal_actions(session: &AssistSession) -> Vec<LegalActions> {
    session
        .alive_agents()
        .into_iter()
        .map(|agent| LegalActions {
            agent,
            actions: session.masks[agent]
                .iter()
                .enumerate()
                .filter(|(_, &ok)| ok)
                .map(|(i, _)| ActionSpec::new(agent, Action::from_index(i)))
                .collect(),
        })
        .collect()
}

pub fn assist_request(episode: u64, session: &AssistSession, retry_budget: usize) -> ServerMessage {
    ServerMessage::AssistRequest {
        session: session.id,
        state: snapshot_payload(episode, &session.snapshot, &session.partition, &session.report),
        incumbent_score: session.incumbent_score,
        legal: legal_actions(session),
        retry_budget,
    }
}

/// Builds a proposal from wire fields; structural problems become protocol errors.
pub fn proposal_from_wire(groups: Vec<Vec<usize>>, actions: &[ActionSpec]) -> Result<Proposal, HarpError> {
    let partition = GroupPartition::new(groups).map_err(|e| HarpError::Protocol(e.to_string()))?;
    let mut map = BTreeMap::new();
    for spec in actions {
        let a = Action::from_name(&spec.action, spec.target)?;
        if map.insert(spec.agent, a).is_some() {
            return Err(HarpError::Protocol(format!("two actions for agent {}", spec.agent)));
        }
    }
    Ok(Proposal {
        partition,
        actions: map,
    })
}

pub fn encode(msg: &ServerMessage) -> String {
    let mut s = serde_json::to_string(msg).expect("wire messages serialize");
    s.push('\n');
    s
}

pub fn decode_client(text: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(text.trim_end()).map_err(|e| format!("malformed message: {e}"))
}

pub fn decode_server(text: &str) -> Result<ServerMessage, String> {
    serde_json::from_str(text.trim_end()).map_err(|e| format!("malformed message: {e}"))
}
