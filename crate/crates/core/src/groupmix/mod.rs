//! The grouped value stack.
//!
//! A shared recurrent agent network produces per-agent Q values and hidden
//! states. Within each group, contribution weights `w1` (from the grouping
//! hypernetwork) weight the members' chosen-action Qs and feature weights `w2`
//! weight their hidden states before mean pooling; a small head corrects the
//! weighted sum using the pooled group state. A monotone mixer combines the
//! group values into `Q_total`, and the permutation-invariant critic is tied
//! to the group values by an L2 consistency term during training.

mod batch;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, HarpError, Result};
use crate::grouping::{GroupPartition, HyperW1};
use crate::numcore::{Graph, GruCell, GruState, Linear, ParameterStore, Tensor, Var};
use crate::pigc::{CriticConfig, Pigc};
use crate::scalar::Scalar;

pub use batch::{compute_targets, td_train_step, training_loss, EpisodeRecord, LossReport, LossVars, ReplayBatch};
pub use train::{
    eval_seeds, evaluate_greedy, random_policy_win_rate, rollout, run_greedy_episode, EvalRecord, Rollout,
    TrainConfig, TrainEvent, Trainer, EVAL_SEED_OFFSET,
};

/// Layer widths of the value stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub encoder_dim: usize,
    pub hidden_dim: usize,
    pub hyper_dim: usize,
    pub mixer_dim: usize,
    pub critic: CriticConfig,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder_dim: 32,
            hidden_dim: 32,
            hyper_dim: 16,
            mixer_dim: 16,
            critic: CriticConfig::default(),
        }
    }
}

/// Sizes fixed by the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub state_dim: usize,
}

impl NetDims {
    pub fn for_scenario(scenario: &crate::env::ScenarioConfig) -> Self {
        let (n, m) = (scenario.n_allies(), scenario.n_enemies());
        Self {
            n_agents: n,
            obs_dim: crate::env::observation_dim(n, m),
            n_actions: crate::env::num_actions(m),
            state_dim: crate::env::state_dim(n, m),
        }
    }
}

/// Shared per-agent network: encoder, GRU, Q head. The input is the
/// observation followed by a one-hot agent id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentNet {
    pub encoder: Linear,
    pub gru: GruCell,
    pub head: Linear,
    pub n_agents: usize,
    pub obs_dim: usize,
}

impl AgentNet {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_agents
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim
    }

    /// `x: [m, obs + n]`, `h: [m, H]` → `(q [m, |U|], h' [m, H])`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var, h: Var) -> Result<(Var, Var)> {
        let e = self.encoder.forward(g, store, x)?;
        let e = g.elu(e);
        let h2 = self.gru.forward(g, store, e, h)?;
        let q = self.head.forward(g, store, h2)?;
        Ok((q, h2))
    }

    /// Input row for `agent`: observation then one-hot id.
    pub fn input_row<T: Scalar>(&self, obs: &[f64], agent: usize) -> Result<Vec<T>> {
        if obs.len() != self.obs_dim {
            return Err(HarpError::Dimension {
                op: "agent observation",
                left: vec![obs.len()],
                right: vec![self.obs_dim],
            });
        }
        if agent >= self.n_agents {
            return Err(HarpError::Lookup(format!("no agent {agent}")));
        }
        let mut row: Vec<T> = obs.iter().map(|&v| T::lit(v)).collect();
        row.extend((0..self.n_agents).map(|i| if i == agent { T::one() } else { T::zero() }));
        Ok(row)
    }
}

/// Two-layer MLP `Linear → ELU → Linear`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        in_dim: usize,
        width: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), in_dim, width, 1.0, rng)?,
            out: Linear::new(store, &format!("{name}.1"), width, out_dim, 1.0, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let z = self.hidden.forward(g, store, x)?;
        let z = g.elu(z);
        self.out.forward(g, store, z)
    }
}

/// Every network of the value stack; parameters live in a separate store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarpNet {
    pub dims: NetDims,
    pub config: NetConfig,
    pub agent: AgentNet,
    pub hyper_w1: HyperW1,
    pub hyper_w2: Linear,
    pub group_head: Mlp,
    pub mixer_weight: Mlp,
    pub mixer_value: Mlp,
    pub critic: Pigc,
}

impl HarpNet {
    /// Registers all parameters in `store` in a fixed order.
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        dims: NetDims,
        config: NetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let NetConfig {
            encoder_dim: e,
            hidden_dim: h,
            hyper_dim: hy,
            mixer_dim: md,
            critic,
        } = config;
        if [e, h, hy, md].contains(&0) || dims.n_agents == 0 || dims.n_actions == 0 {
            return Err(HarpError::Config("network widths and sizes must be non-zero".into()));
        }
        let s = dims.state_dim;
        let agent = AgentNet {
            encoder: Linear::new(store, "agent.encoder", dims.obs_dim + dims.n_agents, e, 1.0, rng)?,
            gru: GruCell::new(store, "agent.gru", e, h, rng)?,
            head: Linear::new(store, "agent.head", h, dims.n_actions, 1.0, rng)?,
            n_agents: dims.n_agents,
            obs_dim: dims.obs_dim,
        };
        Ok(Self {
            dims,
            config,
            agent,
            hyper_w1: HyperW1::new(store, "hyper_w1", h, hy, rng)?,
            hyper_w2: Linear::new(store, "hyper_w2", h, 1, 1.0, rng)?,
            group_head: Mlp::new(store, "group_head", h + 1, md, 1, rng)?,
            mixer_weight: Mlp::new(store, "mixer.weight", h + s, md, 1, rng)?,
            mixer_value: Mlp::new(store, "mixer.value", s, md, 1, rng)?,
            critic: Pigc::new(store, "critic", h, &critic, rng)?,
        })
    }

    /// Group values for `groups` (row indices into `h`).
    ///
    /// Returns `(Q_g [G, 1], pooled state [G, H])` with
    /// `agg = Σ w1_a·Q_a`, `pool = mean(w2_a·h_a)`, `Q_g = agg + head([pool ‖ agg])`.
    pub fn group_values<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        h: Var,
        chosen_q: Var,
        groups: &[Vec<usize>],
    ) -> Result<(Var, Var)> {
        let w1 = self.hyper_w1.forward(g, store, h)?;
        let w2 = self.hyper_w2.forward(g, store, h)?;
        let w2 = g.abs(w2);
        let wq = g.mul(w1, chosen_q)?;
        let ones = vec![T::one(); groups.len()];
        let agg = g.set_sum(wq, groups, &ones)?;
        let weighted = g.mul_rows(h, w2)?;
        let means: Vec<T> = groups.iter().map(|grp| T::one() / T::from_count(grp.len())).collect();
        let pool = g.set_sum(weighted, groups, &means)?;
        let head_in = g.concat_cols(&[pool, agg])?;
        let correction = self.group_head.forward(g, store, head_in)?;
        Ok((g.add(agg, correction)?, pool))
    }

    /// `Q_total` per slice: `Σ_{j ∈ slice} |m_j|·Q_g_j + V(s)`.
    ///
    /// `group_states: [G, S]` is the global state of each group's slice and
    /// `slice_states: [V, S]` the state of each slice; `slices[v]` lists the
    /// group rows of slice `v`.
    #[allow(clippy::too_many_arguments)]
    pub fn mix<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        group_q: Var,
        pool: Var,
        group_states: Var,
        slice_states: Var,
        slices: &[Vec<usize>],
    ) -> Result<Var> {
        let m_in = g.concat_cols(&[pool, group_states])?;
        let m = self.mixer_weight.forward(g, store, m_in)?;
        let m = g.abs(m);
        let weighted = g.mul(m, group_q)?;
        let ones = vec![T::one(); slices.len()];
        let total = g.set_sum(weighted, slices, &ones)?;
        let v = self.mixer_value.forward(g, store, slice_states)?;
        g.add(total, v)
    }
}

/// Lowest-index argmax over legal entries.
pub fn masked_argmax<T: Scalar>(q: &[T], mask: &[bool]) -> Result<usize> {
    if q.len() != mask.len() {
        return Err(HarpError::Dimension {
            op: "masked_argmax",
            left: vec![q.len()],
            right: vec![mask.len()],
        });
    }
    let mut best: Option<usize> = None;
    for (i, (&v, &legal)) in q.iter().zip(mask).enumerate() {
        if legal && best.map_or(true, |b| v > q[b]) {
            best = Some(i);
        }
    }
    best.ok_or_else(|| HarpError::Contract("no legal action".into()))
}

/// Q values with illegal entries replaced by `-inf`.
pub fn mask_q<T: Scalar>(q: &[T], mask: &[bool]) -> Vec<T> {
    q.iter()
        .zip(mask)
        .map(|(&v, &legal)| if legal { v } else { T::neg_infinity() })
        .collect()
}

/// One agent-network step for a single agent.
pub fn agent_q<T: Scalar>(
    net: &HarpNet,
    store: &ParameterStore<T>,
    observation: &[f64],
    agent: usize,
    prev: &GruState<T>,
) -> Result<(Tensor<T>, GruState<T>)> {
    let (q, h) = agent_q_all(net, store, &[observation.to_vec()], &[agent], std::slice::from_ref(prev))?;
    Ok((Tensor::vector(q.into_iter().next().expect("one row")), h.into_iter().next().expect("one row")))
}

/// Batched agent-network step for `agents[i]` observing `observations[i]`.
pub fn agent_q_all<T: Scalar>(
    net: &HarpNet,
    store: &ParameterStore<T>,
    observations: &[Vec<f64>],
    agents: &[usize],
    prev: &[GruState<T>],
) -> Result<(Vec<Vec<T>>, Vec<GruState<T>>)> {
    let hd = net.agent.hidden_dim();
    let mut x = Vec::with_capacity(agents.len());
    let mut h = Vec::with_capacity(agents.len());
    for ((obs, &a), p) in observations.iter().zip(agents).zip(prev) {
        x.push(net.agent.input_row::<T>(obs, a)?);
        if p.hidden.len() != hd {
            return Err(HarpError::Dimension {
                op: "agent hidden state",
                left: p.hidden.shape().to_vec(),
                right: vec![hd],
            });
        }
        h.push(p.hidden.data().to_vec());
    }
    if x.len() != agents.len() || h.len() != agents.len() {
        return contract("one observation and hidden state per agent required");
    }
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_rows(&x)?);
    let hv = g.constant(Tensor::from_rows(&h)?);
    let (q, h2) = net.agent.forward(&mut g, store, xv, hv)?;
    let (qv, hv2) = (g.value(q), g.value(h2));
    if !qv.is_finite() || !hv2.is_finite() {
        return Err(HarpError::Numeric("agent network produced a non-finite value".into()));
    }
    let qs = (0..agents.len()).map(|i| qv.row(i).to_vec()).collect();
    let hs = (0..agents.len())
        .map(|i| GruState {
            hidden: Tensor::vector(hv2.row(i).to_vec()),
        })
        .collect();
    Ok((qs, hs))
}

/// Group values aligned with the partition's group order.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupQ<T> {
    pub values: Vec<T>,
    /// Pooled group state per group, consumed by the mixer.
    pub pooled: Vec<Tensor<T>>,
}

/// Group Q values for a partition over exactly the agents in `hidden_states`.
pub fn group_q_values<T: Scalar>(
    net: &HarpNet,
    store: &ParameterStore<T>,
    hidden_states: &BTreeMap<usize, Tensor<T>>,
    partition: &GroupPartition,
    chosen_qs: &BTreeMap<usize, T>,
) -> Result<GroupQ<T>> {
    let agents: Vec<usize> = hidden_states.keys().copied().collect();
    if partition.agents() != agents || chosen_qs.keys().copied().collect::<Vec<_>>() != agents {
        return contract(format!(
            "partition {partition} must cover exactly the agents with hidden states and Q values"
        ));
    }
    let index: BTreeMap<usize, usize> = agents.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let rows: Vec<Vec<T>> = agents.iter().map(|a| hidden_states[a].data().to_vec()).collect();
    let qs: Vec<T> = agents.iter().map(|a| chosen_qs[a]).collect();
    let groups: Vec<Vec<usize>> = partition
        .groups()
        .iter()
        .map(|grp| grp.iter().map(|a| index[a]).collect())
        .collect();
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&rows)?);
    let q = g.constant(Tensor::new(vec![qs.len(), 1], qs)?);
    let (gq, pool) = net.group_values(&mut g, store, h, q, &groups)?;
    let values = g.value(gq).data().to_vec();
    let pv = g.value(pool);
    let pooled = (0..groups.len()).map(|j| Tensor::vector(pv.row(j).to_vec())).collect();
    Ok(GroupQ { values, pooled })
}

/// Mixes group values into `Q_total` under the global state features.
pub fn mix_total<T: Scalar>(net: &HarpNet, store: &ParameterStore<T>, group_qs: &GroupQ<T>, state: &[f64]) -> Result<T> {
    let k = group_qs.values.len();
    if k == 0 || group_qs.pooled.len() != k {
        return contract("mixing needs at least one group with a pooled state");
    }
    if state.len() != net.dims.state_dim {
        return Err(HarpError::Dimension {
            op: "mix_total state",
            left: vec![state.len()],
            right: vec![net.dims.state_dim],
        });
    }
    let srow: Vec<T> = state.iter().map(|&v| T::lit(v)).collect();
    let mut g = Graph::new();
    let q = g.constant(Tensor::new(vec![k, 1], group_qs.values.clone())?);
    let pool_rows: Vec<Vec<T>> = group_qs.pooled.iter().map(|t| t.data().to_vec()).collect();
    let pool = g.constant(Tensor::from_rows(&pool_rows)?);
    let gs = g.constant(Tensor::from_rows(&vec![srow.clone(); k])?);
    let ss = g.constant(Tensor::from_rows(&[srow])?);
    let total = net.mix(&mut g, store, q, pool, gs, ss, &[(0..k).collect()])?;
    Ok(g.scalar(total))
}
