//! Agent group partitions and the contribution-driven regrouping rule.
//!
//! A partition is an ordered list of disjoint, non-empty groups. Regrouping
//! sweeps the groups in order: every agent whose contribution weight falls
//! strictly below its group's mean weight is moved to the next group, and the
//! sweep continues on the enlarged next group. Agents kicked from the last
//! group open a new trailing group.
//!
//! Threshold and sweep are generic over any ordered numeric type, so they can
//! be evaluated exactly over rationals as well as over floats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::Num;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, HarpError, Result};
use crate::numcore::{Graph, Linear, ParameterStore, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
}

impl TryFrom<Vec<Vec<usize>>> for GroupPartition {
    type Error = HarpError;

    fn try_from(groups: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(groups)
    }
}

impl From<GroupPartition> for Vec<Vec<usize>> {
    fn from(p: GroupPartition) -> Self {
        p.groups
    }
}

impl GroupPartition {
    /// Checks disjointness and that no group is empty.
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (j, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return contract(format!("group {j} is empty"));
            }
            for &a in g {
                if !seen.insert(a) {
                    return contract(format!("agent {a} appears in more than one group"));
                }
            }
        }
        Ok(Self { groups })
    }

    /// Partition that must cover exactly the agents `0..n`.
    pub fn covering(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let p = Self::new(groups)?;
        p.check_covers(&(0..n).collect::<Vec<_>>())?;
        Ok(p)
    }

    pub fn single(n: usize) -> Self {
        Self {
            groups: if n == 0 { vec![] } else { vec![(0..n).collect()] },
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            groups: (0..n).map(|a| vec![a]).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// All agents in ascending id order.
    pub fn agents(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.groups.iter().flatten().copied().collect();
        a.sort_unstable();
        a
    }

    pub fn num_agents(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group_of(&self, agent: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&agent))
    }

    pub fn check_covers(&self, agents: &[usize]) -> Result<()> {
        let want: BTreeSet<usize> = agents.iter().copied().collect();
        let have: BTreeSet<usize> = self.groups.iter().flatten().copied().collect();
        if want != have {
            let missing: Vec<_> = want.difference(&have).collect();
            let extra: Vec<_> = have.difference(&want).collect();
            return contract(format!(
                "partition does not cover the agent set (missing {missing:?}, unexpected {extra:?})"
            ));
        }
        Ok(())
    }

    /// Keeps only `agents`, dropping groups that become empty.
    pub fn restrict(&self, agents: &[usize]) -> Self {
        let keep: BTreeSet<usize> = agents.iter().copied().collect();
        Self {
            groups: self
                .groups
                .iter()
                .map(|g| g.iter().copied().filter(|a| keep.contains(a)).collect::<Vec<_>>())
                .filter(|g| !g.is_empty())
                .collect(),
        }
    }

    /// Appends `agents` not yet placed as one trailing group.
    pub fn with_trailing(&self, agents: &[usize]) -> Self {
        let placed: BTreeSet<usize> = self.groups.iter().flatten().copied().collect();
        let rest: Vec<usize> = agents.iter().copied().filter(|a| !placed.contains(a)).collect();
        let mut groups = self.groups.clone();
        if !rest.is_empty() {
            groups.push(rest);
        }
        Self { groups }
    }

    /// Order-free form: each group sorted, groups sorted.
    pub fn canonical(&self) -> Self {
        let mut groups: Vec<Vec<usize>> = self
            .groups
            .iter()
            .map(|g| {
                let mut g = g.clone();
                g.sort_unstable();
                g
            })
            .collect();
        groups.sort();
        Self { groups }
    }

    pub fn same_sets(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }

    /// Parses the bracket form produced by [`partition_signature`].
    pub fn parse_signature(s: &str) -> Result<Self> {
        let mut groups = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            let Some(open) = rest.strip_prefix('[') else {
                return contract(format!("malformed partition signature {s:?}"));
            };
            let Some(close) = open.find(']') else {
                return contract(format!("malformed partition signature {s:?}"));
            };
            let ids = open[..close]
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| HarpError::Contract(format!("bad agent id {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            groups.push(ids);
            rest = open[close + 1..].trim_start();
        }
        Self::new(groups)
    }
}

impl fmt::Display for GroupPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, g) in self.groups.iter().enumerate() {
            if j > 0 {
                f.write_str(" ")?;
            }
            f.write_str("[")?;
            for (k, a) in g.iter().enumerate() {
                if k > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str("]")?;
        }
        Ok(())
    }
}

/// Bracket rendering with ids in stored order, e.g. `"[2 4 5 6 8] [7 9 0] [3 1]"`.
pub fn partition_signature(partition: &GroupPartition) -> String {
    partition.to_string()
}

/// Per-agent contribution weight to its group's value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContributionWeights<T> {
    pub w1: BTreeMap<usize, T>,
}

impl<T: Copy> ContributionWeights<T> {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, T)>) -> Self {
        Self {
            w1: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, agent: usize) -> Result<T> {
        self.w1
            .get(&agent)
            .copied()
            .ok_or_else(|| HarpError::Lookup(format!("no contribution weight for agent {agent}")))
    }
}

fn mean_weight<T>(group: &[usize], weights: &ContributionWeights<T>) -> Result<T>
where
    T: Num + Copy,
{
    if group.is_empty() {
        return contract("threshold of an empty group");
    }
    let mut sum = T::zero();
    let mut count = T::zero();
    for &a in group {
        sum = sum + weights.get(a)?;
        count = count + T::one();
    }
    Ok(sum / count)
}

/// Mean contribution weight of group `group_index`.
pub fn group_threshold<T>(
    partition: &GroupPartition,
    weights: &ContributionWeights<T>,
    group_index: usize,
) -> Result<T>
where
    T: Num + Copy,
{
    let group = partition
        .groups
        .get(group_index)
        .ok_or_else(|| HarpError::Contract(format!("no group {group_index}")))?;
    mean_weight(group, weights)
}

/// One regrouping sweep with no limit on the number of groups.
pub fn select_and_kick<T>(partition: &GroupPartition, weights: &ContributionWeights<T>) -> Result<GroupPartition>
where
    T: Num + Copy + PartialOrd,
{
    select_and_kick_capped(partition, weights, None)
}

/// Regrouping sweep; with `max_groups = Some(k)` agents kicked from group `k`
/// stay put instead of opening group `k + 1`.
pub fn select_and_kick_capped<T>(
    partition: &GroupPartition,
    weights: &ContributionWeights<T>,
    max_groups: Option<usize>,
) -> Result<GroupPartition>
where
    T: Num + Copy + PartialOrd,
{
    for &a in partition.groups.iter().flatten() {
        weights.get(a)?;
    }
    let mut groups = partition.groups.clone();
    let mut j = 0;
    while j < groups.len() {
        if groups[j].is_empty() {
            j += 1;
            continue;
        }
        let tau = mean_weight(&groups[j], weights)?;
        let is_last = j + 1 == groups.len();
        if is_last && max_groups.is_some_and(|k| groups.len() >= k) {
            break;
        }
        let (stay, kicked): (Vec<usize>, Vec<usize>) = groups[j]
            .iter()
            .partition(|&&a| !(weights.w1[&a] < tau));
        // An all-kicked group only arises from rounding in the mean of equal weights.
        if !kicked.is_empty() && !stay.is_empty() {
            groups[j] = stay;
            if is_last {
                groups.push(kicked);
            } else {
                groups[j + 1].extend(kicked);
            }
        }
        j += 1;
    }
    groups.retain(|g| !g.is_empty());
    GroupPartition::new(groups)
}

/// Contribution-weight generator: `w1 = softplus(MLP(h))`, one positive scalar per agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HyperW1 {
    pub hidden: Linear,
    pub out: Linear,
}

impl HyperW1 {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParameterStore<T>,
        name: &str,
        state_dim: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), state_dim, embed_dim, 1.0, rng)?,
            out: Linear::new(store, &format!("{name}.1"), embed_dim, 1, 1.0, rng)?,
        })
    }

    /// `h: [m, H]` → `[m, 1]` strictly positive weights.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, h: Var) -> Result<Var> {
        let z = self.hidden.forward(g, store, h)?;
        let z = g.elu(z);
        let z = self.out.forward(g, store, z)?;
        Ok(g.softplus(z))
    }
}

/// Contribution weights for `agents` from their hidden states.
pub fn hyper_w1<T: Scalar>(
    hidden_states: &BTreeMap<usize, Tensor<T>>,
    agents: &[usize],
    net: &HyperW1,
    store: &ParameterStore<T>,
) -> Result<ContributionWeights<T>> {
    let mut rows = Vec::with_capacity(agents.len());
    for &a in agents {
        let h = hidden_states
            .get(&a)
            .ok_or_else(|| HarpError::Lookup(format!("no hidden state for agent {a}")))?;
        rows.push(h.data().to_vec());
    }
    if rows.is_empty() {
        return Ok(ContributionWeights::default());
    }
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&rows)?);
    let w = net.forward(&mut g, store, h)?;
    let vals = g.value(w).data().to_vec();
    Ok(ContributionWeights::from_pairs(agents.iter().copied().zip(vals)))
}
