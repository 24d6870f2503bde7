use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{contract, HarpError, Result};
use crate::grouping::GroupPartition;

/// Default history length of the assist trigger.
pub const QUEUE_CAPACITY: usize = 10;

/// Bounded FIFO of recent values; the oldest entry is evicted when full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedQueue {
    capacity: usize,
    values: VecDeque<f64>,
}

impl BoundedQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            values: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn from_values(capacity: usize, values: impl IntoIterator<Item = f64>) -> Self {
        let mut q = Self::new(capacity);
        values.into_iter().for_each(|v| q.push(v));
        q
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn max(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    pub fn min(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::min)
    }

    pub fn values(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Trigger history: combined variance values plus the raw intra and inter
/// terms used to normalise each component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceQueue {
    pub values: BoundedQueue,
    pub intra: BoundedQueue,
    pub inter: BoundedQueue,
}

impl VarianceQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: BoundedQueue::new(capacity),
            intra: BoundedQueue::new(capacity),
            inter: BoundedQueue::new(capacity),
        }
    }
}

impl Default for VarianceQueue {
    fn default() -> Self {
        Self::new(QUEUE_CAPACITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Raw intra-group term.
    pub intra: f64,
    /// Raw inter-group term.
    pub inter: f64,
    pub combined: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Min-max position of `v` within `history` (which already contains `v`); 0 for a flat history.
pub fn min_max_normalize(v: f64, history: &BoundedQueue) -> f64 {
    match (history.min(), history.max()) {
        (Some(lo), Some(hi)) if hi > lo => (v - lo) / (hi - lo),
        _ => 0.0,
    }
}

/// Raw `(intra, inter)` terms.
///
/// `intra = Σ_g (1/|g|) Σ_{a∈g} (Q_a − mean_g)²`, `inter = (1/|G|) Σ_g (Q_g − mean)²`.
pub fn raw_variance(
    partition: &GroupPartition,
    agent_qs: &BTreeMap<usize, f64>,
    group_qs: &[f64],
) -> Result<(f64, f64)> {
    if partition.num_groups() != group_qs.len() || partition.is_empty() {
        return contract(format!(
            "{} group values for partition {partition}",
            group_qs.len()
        ));
    }
    let mut intra = 0.0;
    for grp in partition.groups() {
        if grp.is_empty() {
            return contract("empty group");
        }
        let qs: Vec<f64> = grp
            .iter()
            .map(|a| {
                agent_qs
                    .get(a)
                    .copied()
                    .ok_or_else(|| HarpError::Lookup(format!("no Q value for agent {a}")))
            })
            .collect::<Result<_>>()?;
        let k = qs.len() as f64;
        let mean = qs.iter().sum::<f64>() / k;
        intra += qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / k;
    }
    let k = group_qs.len() as f64;
    let mean = group_qs.iter().sum::<f64>() / k;
    let inter = group_qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / k;
    Ok((intra, inter))
}

/// Computes both terms, records them in their normalisation histories and
/// blends the normalised values with `alpha` and `beta`.
pub fn group_variance(
    partition: &GroupPartition,
    agent_qs: &BTreeMap<usize, f64>,
    group_qs: &[f64],
    alpha: f64,
    beta: f64,
    queues: &mut VarianceQueue,
) -> Result<VarianceReport> {
    let (intra, inter) = raw_variance(partition, agent_qs, group_qs)?;
    queues.intra.push(intra);
    queues.inter.push(inter);
    let combined = alpha * min_max_normalize(intra, &queues.intra) + beta * min_max_normalize(inter, &queues.inter);
    Ok(VarianceReport {
        intra,
        inter,
        combined,
        alpha,
        beta,
    })
}

/// Fires when the history is full and `combined ≥ max(history)`.
///
/// The value is recorded either way. Skipping fired values would let the
/// history maximum only ever fall, after which the trigger fires on nearly
/// every step.
pub fn should_request_help(report: &VarianceReport, queue: &mut VarianceQueue) -> bool {
    let fire = queue.values.is_full() && queue.values.max().is_some_and(|m| report.combined >= m);
    queue.values.push(report.combined);
    fire
}

/// Human interventions per deployment step (a fraction in `[0, 1]`).
pub fn participation(interventions: u64, steps: u64) -> f64 {
    if steps == 0 {
        0.0
    } else {
        interventions as f64 / steps as f64
    }
}
