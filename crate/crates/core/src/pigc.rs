//! Permutation-invariant group critic.
//!
//! Agents are graph nodes carrying their recurrent hidden states. Each group is
//! a complete subgraph with self-loops and there are no edges between groups.
//! Stacked GCN layers propagate within groups, each group's node embeddings
//! are mean-pooled and a linear readout turns the pool into that group's Q.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, HarpError, Result};
use crate::grouping::GroupPartition;
use crate::numcore::{adjacency_sets, gcn_layer, Activation, Graph, Linear, ParamId, ParameterStore, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Number of GCN layers.
    pub layers: usize,
    pub width: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { layers: 2, width: 32 }
    }
}

/// GCN weights `W^(l): [d_in, d_out]` plus the per-group readout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pigc {
    pub layers: Vec<ParamId>,
    pub readout: Linear,
}

impl Pigc {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        node_dim: usize,
        config: &CriticConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 || config.width == 0 {
            return Err(HarpError::Config("critic needs at least one layer of non-zero width".into()));
        }
        let mut layers = Vec::with_capacity(config.layers);
        let mut d_in = node_dim;
        for l in 0..config.layers {
            // stored as [d_in, d_out]; uniform bound 1/sqrt(d_out)
            layers.push(store.add_uniform(format!("{name}.gcn{l}"), &[d_in, config.width], 1.0, rng)?);
            d_in = config.width;
        }
        let readout = Linear::new(store, &format!("{name}.readout"), config.width, 1, 1.0, rng)?;
        Ok(Self { layers, readout })
    }

    /// Per-group Q values `[groups.len(), 1]` for node features `feats: [N, d]`.
    ///
    /// `groups` are row indices into `feats`; every row must belong to exactly
    /// one group, so several graphs can be batched as disjoint groups.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        feats: Var,
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let n = g.value(feats).rows();
        let mut neighbours: Vec<Option<&Vec<usize>>> = vec![None; n];
        for group in groups {
            for &i in group {
                match neighbours.get_mut(i) {
                    Some(slot @ None) => *slot = Some(group),
                    Some(Some(_)) => return contract(format!("node {i} is in two groups")),
                    None => return contract(format!("node {i} out of range for {n} nodes")),
                }
            }
        }
        let sets: Vec<Vec<usize>> = neighbours
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.cloned().ok_or_else(|| HarpError::Contract(format!("node {i} is in no group"))))
            .collect::<Result<_>>()?;
        self.forward_sets(g, store, feats, &sets, groups)
    }

    fn forward_sets<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        feats: Var,
        adj_sets: &[Vec<usize>],
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let mut h = feats;
        for &w in &self.layers {
            let w = g.param(store, w);
            h = gcn_layer(g, h, adj_sets, w, Activation::Elu)?;
        }
        let scale: Vec<T> = groups.iter().map(|grp| T::one() / T::from_count(grp.len())).collect();
        let pooled = g.set_sum(h, groups, &scale)?;
        self.readout.forward(g, store, pooled)
    }
}

/// Node features and adjacency for one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupGraph<T> {
    /// `Â = A + I`, `[N, N]`.
    pub adjacency: Tensor<T>,
    /// Row `i` is the hidden state of `agents[i]`.
    pub node_features: Tensor<T>,
    pub partition: GroupPartition,
    /// Agent id of each node, ascending.
    pub agents: Vec<usize>,
}

impl<T: Scalar> GroupGraph<T> {
    /// Node indices of each group, in partition order.
    pub fn group_nodes(&self) -> Vec<Vec<usize>> {
        let index: BTreeMap<usize, usize> = self.agents.iter().enumerate().map(|(i, &a)| (a, i)).collect();
        self.partition
            .groups()
            .iter()
            .map(|grp| grp.iter().map(|a| index[a]).collect())
            .collect()
    }
}

/// Builds the block-diagonal group graph over exactly the agents that have hidden states.
pub fn build_group_graph<T: Scalar>(
    hidden_states: &BTreeMap<usize, Tensor<T>>,
    partition: &GroupPartition,
) -> Result<GroupGraph<T>> {
    let agents: Vec<usize> = hidden_states.keys().copied().collect();
    if partition.agents() != agents {
        return contract(format!(
            "partition {} does not match the agents with hidden states {:?}",
            partition, agents
        ));
    }
    let n = agents.len();
    let index: BTreeMap<usize, usize> = agents.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let mut adjacency = Tensor::identity(n);
    for grp in partition.groups() {
        for a in grp {
            for b in grp {
                adjacency.set(index[a], index[b], T::one());
            }
        }
    }
    let rows: Vec<Vec<T>> = agents.iter().map(|a| hidden_states[a].data().to_vec()).collect();
    let node_features = Tensor::from_rows(&rows)?;
    Ok(GroupGraph {
        adjacency,
        node_features,
        partition: partition.clone(),
        agents,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticOutput<T> {
    /// One value per group, in partition order.
    pub group_q: Vec<T>,
    pub score: T,
}

pub fn critic_forward<T: Scalar>(graph: &GroupGraph<T>, net: &Pigc, store: &ParameterStore<T>) -> Result<CriticOutput<T>> {
    let sets = adjacency_sets(&graph.adjacency)?;
    let groups = graph.group_nodes();
    let mut g = Graph::new();
    let feats = g.constant(graph.node_features.clone());
    let q = net.forward_sets(&mut g, store, feats, &sets, &groups)?;
    let group_q = g.value(q).data().to_vec();
    let score = group_q.iter().copied().sum();
    Ok(CriticOutput { group_q, score })
}

/// Sum of the critic's group Qs: the number compared when judging a regrouping.
pub fn score_partition<T: Scalar>(
    hidden_states: &BTreeMap<usize, Tensor<T>>,
    partition: &GroupPartition,
    net: &Pigc,
    store: &ParameterStore<T>,
) -> Result<T> {
    if partition.is_empty() {
        return contract("cannot score an empty partition");
    }
    let graph = build_group_graph(hidden_states, partition)?;
    Ok(critic_forward(&graph, net, store)?.score)
}

/// Group critic that feeds each group's member states, concatenated in listed
/// order and zero-padded, to an MLP. Sensitive to member order; kept as a
/// reference point for the invariance tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcatCritic {
    pub hidden: Linear,
    pub out: Linear,
    pub max_members: usize,
    pub node_dim: usize,
}

impl ConcatCritic {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        node_dim: usize,
        max_members: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), node_dim * max_members, width, 1.0, rng)?,
            out: Linear::new(store, &format!("{name}.1"), width, 1, 1.0, rng)?,
            max_members,
            node_dim,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        hidden_states: &BTreeMap<usize, Tensor<T>>,
        partition: &GroupPartition,
        store: &ParameterStore<T>,
    ) -> Result<CriticOutput<T>> {
        let mut rows = Vec::with_capacity(partition.num_groups());
        for grp in partition.groups() {
            if grp.len() > self.max_members {
                return contract(format!("group of {} exceeds {} members", grp.len(), self.max_members));
            }
            let mut row = vec![T::zero(); self.node_dim * self.max_members];
            for (k, a) in grp.iter().enumerate() {
                let h = hidden_states
                    .get(a)
                    .ok_or_else(|| HarpError::Lookup(format!("no hidden state for agent {a}")))?;
                row[k * self.node_dim..(k + 1) * self.node_dim].copy_from_slice(h.data());
            }
            rows.push(row);
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&rows)?);
        let z = self.hidden.forward(&mut g, store, x)?;
        let z = g.elu(z);
        let q = self.out.forward(&mut g, store, z)?;
        let group_q = g.value(q).data().to_vec();
        let score = group_q.iter().copied().sum();
        Ok(CriticOutput { group_q, score })
    }
}
