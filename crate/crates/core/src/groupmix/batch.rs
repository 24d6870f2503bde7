//! Episode replay batches and the training objective.
//!
//! All episodes of a batch are unrolled together: at time `t` the agent rows
//! of every episode are stacked, so row `t·B·n + b·n + a` holds agent `a` of
//! episode `b`. Episodes shorter than the longest one are padded with zero
//! observations; padded rows never enter a group and carry no loss.

use serde::{Deserialize, Serialize};

use super::{masked_argmax, HarpNet};
use crate::error::{contract, HarpError, Result};
use crate::grouping::GroupPartition;
use crate::numcore::{Graph, ParameterStore, RmsProp, Tensor, Var};
use crate::scalar::Scalar;

/// One complete episode with the partition that was frozen while it ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// `T + 1` joint observations, the last one after the final step.
    pub observations: Vec<Vec<Vec<f64>>>,
    pub masks: Vec<Vec<Vec<bool>>>,
    /// `T + 1` global state feature vectors.
    pub states: Vec<Vec<f64>>,
    /// `T` joint actions as action indices.
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    pub partition: GroupPartition,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, net: &HarpNet) -> Result<()> {
        let t = self.actions.len();
        let d = net.dims;
        if t == 0 {
            return contract("episode record has no steps");
        }
        if self.observations.len() != t + 1
            || self.masks.len() != t + 1
            || self.states.len() != t + 1
            || self.rewards.len() != t
            || self.terminated.len() != t
        {
            return contract(format!("episode record sequences disagree in length ({t} steps)"));
        }
        let bad_obs = self
            .observations
            .iter()
            .any(|o| o.len() != d.n_agents || o.iter().any(|v| v.len() != d.obs_dim));
        let bad_mask = self
            .masks
            .iter()
            .any(|m| m.len() != d.n_agents || m.iter().any(|v| v.len() != d.n_actions));
        let bad_act = self
            .actions
            .iter()
            .any(|a| a.len() != d.n_agents || a.iter().any(|&u| u >= d.n_actions));
        if bad_obs || bad_mask || bad_act || self.states.iter().any(|s| s.len() != d.state_dim) {
            return contract("episode record does not match the network dimensions");
        }
        self.partition.check_covers(&(0..d.n_agents).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBatch {
    pub episodes: Vec<EpisodeRecord>,
}

impl ReplayBatch {
    pub fn validate(&self, net: &HarpNet) -> Result<()> {
        if self.episodes.is_empty() {
            return contract("empty replay batch");
        }
        self.episodes.iter().try_for_each(|e| e.validate(net))
    }

    fn horizon(&self) -> usize {
        self.episodes.iter().map(|e| e.len() + 1).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub td: Var,
    pub critic_l2: Var,
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub td_loss: f64,
    pub critic_l2: f64,
    pub total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

struct Unrolled {
    q: Var,
    h: Var,
}

/// Row and group bookkeeping for a set of `(t, b)` slices.
struct Slices {
    /// Row indices per group, slice-major.
    groups: Vec<Vec<usize>>,
    /// Group indices per slice.
    members: Vec<Vec<usize>>,
    /// `(t, b)` per slice.
    at: Vec<(usize, usize)>,
}

fn row(t: usize, b: usize, a: usize, nb: usize, n: usize) -> usize {
    (t * nb + b) * n + a
}

fn build_slices(batch: &ReplayBatch, n: usize, offset: usize) -> Slices {
    let nb = batch.episodes.len();
    let mut s = Slices {
        groups: Vec::new(),
        members: Vec::new(),
        at: Vec::new(),
    };
    for (b, ep) in batch.episodes.iter().enumerate() {
        for t0 in 0..ep.len() {
            let t = t0 + offset;
            let mut mine = Vec::with_capacity(ep.partition.num_groups());
            for grp in ep.partition.groups() {
                mine.push(s.groups.len());
                s.groups.push(grp.iter().map(|&a| row(t, b, a, nb, n)).collect());
            }
            s.members.push(mine);
            s.at.push((t, b));
        }
    }
    s
}

fn unroll<T: Scalar>(g: &mut Graph<T>, net: &HarpNet, store: &ParameterStore<T>, batch: &ReplayBatch) -> Result<Unrolled> {
    let n = net.dims.n_agents;
    let nb = batch.episodes.len();
    let width = net.agent.input_dim();
    let mut h = g.constant(Tensor::zeros(&[nb * n, net.agent.hidden_dim()]));
    let (mut qs, mut hs) = (Vec::new(), Vec::new());
    for t in 0..batch.horizon() {
        let mut x = vec![T::zero(); nb * n * width];
        for (b, ep) in batch.episodes.iter().enumerate() {
            if let Some(obs) = ep.observations.get(t) {
                for (a, o) in obs.iter().enumerate() {
                    let r = (b * n + a) * width;
                    for (dst, &v) in x[r..r + o.len()].iter_mut().zip(o) {
                        *dst = T::lit(v);
                    }
                    x[r + net.agent.obs_dim + a] = T::one();
                }
            }
        }
        let xv = g.constant(Tensor::new(vec![nb * n, width], x)?);
        let (q, h2) = net.agent.forward(g, store, xv, h)?;
        qs.push(q);
        hs.push(h2);
        h = h2;
    }
    Ok(Unrolled {
        q: g.concat_rows(&qs)?,
        h: g.concat_rows(&hs)?,
    })
}

fn state_rows<T: Scalar>(batch: &ReplayBatch, sl: &Slices, per_group: bool) -> Result<Tensor<T>> {
    let mut rows = Vec::new();
    for (k, &(t, b)) in sl.at.iter().enumerate() {
        let s: Vec<T> = batch.episodes[b].states[t].iter().map(|&v| T::lit(v)).collect();
        let copies = if per_group { sl.members[k].len() } else { 1 };
        for _ in 0..copies {
            rows.push(s.clone());
        }
    }
    Tensor::from_rows(&rows)
}

/// `Q_total` for every slice in `sl` given per-row chosen actions.
fn total_q<T: Scalar>(
    g: &mut Graph<T>,
    net: &HarpNet,
    store: &ParameterStore<T>,
    un: &Unrolled,
    batch: &ReplayBatch,
    sl: &Slices,
    chosen: &[usize],
) -> Result<(Var, Var)> {
    let chosen_q = g.gather(un.q, chosen)?;
    let (gq, pool) = net.group_values(g, store, un.h, chosen_q, &sl.groups)?;
    let gs = g.constant(state_rows(batch, sl, true)?);
    let ss = g.constant(state_rows(batch, sl, false)?);
    let total = net.mix(g, store, gq, pool, gs, ss, &sl.members)?;
    Ok((total, gq))
}

/// Greedy next actions of the online network at `t + 1` for every recorded step.
fn next_greedy<T: Scalar>(g: &Graph<T>, net: &HarpNet, un: &Unrolled, batch: &ReplayBatch) -> Result<Vec<usize>> {
    let n = net.dims.n_agents;
    let nb = batch.episodes.len();
    let qv = g.value(un.q);
    let mut chosen = vec![0usize; qv.rows()];
    for (b, ep) in batch.episodes.iter().enumerate() {
        for t in 1..=ep.len() {
            for a in 0..n {
                let r = row(t, b, a, nb, n);
                chosen[r] = masked_argmax(qv.row(r), &ep.masks[t][a])?;
            }
        }
    }
    Ok(chosen)
}

fn targets_from<T: Scalar>(
    net: &HarpNet,
    target: &ParameterStore<T>,
    batch: &ReplayBatch,
    greedy: &[usize],
    gamma: f64,
) -> Result<Vec<T>> {
    let mut g = Graph::new();
    let un = unroll(&mut g, net, target, batch)?;
    let sl = build_slices(batch, net.dims.n_agents, 1);
    let (total, _) = total_q(&mut g, net, target, &un, batch, &sl, greedy)?;
    let next = g.value(total).data();
    let gamma = T::lit(gamma);
    let mut out = Vec::with_capacity(sl.at.len());
    let mut k = 0;
    for ep in &batch.episodes {
        for t in 0..ep.len() {
            let cont = if ep.terminated[t] { T::zero() } else { T::one() };
            out.push(T::lit(ep.rewards[t]) + gamma * cont * next[k]);
            k += 1;
        }
    }
    Ok(out)
}

/// TD targets `r + γ·(1 − done)·Q_total'`, where the next joint action is the
/// online network's masked argmax and `Q_total'` is evaluated with `target`.
pub fn compute_targets<T: Scalar>(
    net: &HarpNet,
    online: &ParameterStore<T>,
    target: &ParameterStore<T>,
    batch: &ReplayBatch,
    gamma: f64,
) -> Result<Vec<T>> {
    batch.validate(net)?;
    let mut g = Graph::new();
    let un = unroll(&mut g, net, online, batch)?;
    let greedy = next_greedy(&g, net, &un, batch)?;
    targets_from(net, target, batch, &greedy, gamma)
}

fn loss_on<T: Scalar>(
    g: &mut Graph<T>,
    net: &HarpNet,
    store: &ParameterStore<T>,
    un: &Unrolled,
    batch: &ReplayBatch,
    targets: &[T],
    lambda: f64,
) -> Result<LossVars> {
    let n = net.dims.n_agents;
    let nb = batch.episodes.len();
    let sl = build_slices(batch, n, 0);
    if targets.len() != sl.at.len() {
        return Err(HarpError::Dimension {
            op: "td targets",
            left: vec![targets.len()],
            right: vec![sl.at.len()],
        });
    }
    let mut chosen = vec![0usize; g.value(un.q).rows()];
    for (b, ep) in batch.episodes.iter().enumerate() {
        for (t, joint) in ep.actions.iter().enumerate() {
            for (a, &u) in joint.iter().enumerate() {
                chosen[row(t, b, a, nb, n)] = u;
            }
        }
    }
    let (total, gq) = total_q(g, net, store, un, batch, &sl, &chosen)?;
    let y = g.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
    let diff = g.sub(total, y)?;
    let sq = g.square(diff);
    let td = g.mean_all(sq);

    // the critic reads the hidden states of the grouped rows; its L2 term
    // trains the critic, the group value stack and the agent network
    let mut rows = Vec::new();
    let mut groups = Vec::with_capacity(sl.groups.len());
    for grp in &sl.groups {
        let start = rows.len();
        rows.extend_from_slice(grp);
        groups.push((start..rows.len()).collect::<Vec<_>>());
    }
    let feats = g.rows_of(un.h, &rows)?;
    let cq = net.critic.forward(g, store, feats, &groups)?;
    let cdiff = g.sub(cq, gq)?;
    let csq = g.square(cdiff);
    let critic_l2 = g.mean_all(csq);
    let weighted = g.scale(critic_l2, T::lit(lambda));
    let total = g.add(td, weighted)?;
    Ok(LossVars { td, critic_l2, total })
}

/// Builds the full training loss on `g`: TD error of `Q_total` against fixed
/// `targets` plus `lambda` times the critic/group-value L2 term.
pub fn training_loss<T: Scalar>(
    g: &mut Graph<T>,
    net: &HarpNet,
    store: &ParameterStore<T>,
    batch: &ReplayBatch,
    targets: &[T],
    lambda: f64,
) -> Result<LossVars> {
    batch.validate(net)?;
    let un = unroll(g, net, store, batch)?;
    loss_on(g, net, store, &un, batch, targets, lambda)
}

/// One optimisation step on `batch`.
#[allow(clippy::too_many_arguments)]
pub fn td_train_step<T: Scalar>(
    net: &HarpNet,
    store: &mut ParameterStore<T>,
    target: &ParameterStore<T>,
    opt: &mut RmsProp<T>,
    batch: &ReplayBatch,
    gamma: f64,
    lambda: f64,
) -> Result<LossReport> {
    batch.validate(net)?;
    let mut g = Graph::new();
    let un = unroll(&mut g, net, store, batch)?;
    let greedy = next_greedy(&g, net, &un, batch)?;
    let targets = targets_from(net, target, batch, &greedy, gamma)?;
    let lv = loss_on(&mut g, net, store, &un, batch, &targets, lambda)?;
    let grads = g.backward(lv.total)?;
    store.zero_grad();
    grads.accumulate_into(store);
    let grad_norm = opt.step(store).to_f64_lossy();
    if !grad_norm.is_finite() {
        return Err(HarpError::Numeric("non-finite gradient".into()));
    }
    Ok(LossReport {
        td_loss: g.scalar(lv.td).to_f64_lossy(),
        critic_l2: g.scalar(lv.critic_l2).to_f64_lossy(),
        total: g.scalar(lv.total).to_f64_lossy(),
        grad_norm,
    })
}
