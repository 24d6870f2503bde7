//! Programmatic stand-ins for the human side of an assist session.

use std::collections::BTreeMap;

use crate::env::{chebyshev, Action, SkirmishState, NUM_BASIC_ACTIONS};
use crate::grouping::GroupPartition;

use super::{AssistSession, HumanChannel, HumanReply, Proposal};

/// Declines every session. Deployment with this channel matches the greedy policy.
#[derive(Debug, Clone, Copy, Default)]
pub struct AbandonChannel;

impl HumanChannel for AbandonChannel {
    fn request(&mut self, _session: &AssistSession) -> HumanReply {
        HumanReply::Abandon
    }
}

/// Scripted expert: regroups alive agents by position and focuses fire.
///
/// Candidate partitions come from k-means over unit positions (k = 1..=3,
/// preferring the best silhouette) with wounded agents held back in their own
/// group. Candidates equal to the incumbent are skipped and each is proposed
/// once per session, in order; the oracle abandons when none are left.
#[derive(Debug, Clone, Default)]
pub struct ScriptedOracle {
    session: Option<u64>,
    queue: Vec<GroupPartition>,
    /// Health fraction under which an agent counts as wounded for the split candidate.
    pub wounded_below: f64,
}

impl ScriptedOracle {
    pub fn new() -> Self {
        Self {
            wounded_below: 0.35,
            ..Self::default()
        }
    }

    /// Proposals in the order they will be tried: the silhouette-best
    /// clustering with wounded agents split off, then the plain clusterings,
    /// then a fit/wounded split.
    pub fn candidates(&self, state: &SkirmishState, incumbent: &GroupPartition) -> Vec<GroupPartition> {
        let alive = state.alive_allies();
        let wounded: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&a| state.allies[a].health_fraction() < self.wounded_below)
            .collect();
        let fit: Vec<usize> = alive.iter().copied().filter(|a| !wounded.contains(a)).collect();
        let clusterings: Vec<GroupPartition> = (1..=3.min(alive.len()))
            .map(|k| kmeans_partition(state, &alive, k))
            .collect();
        let best = clusterings
            .iter()
            .max_by(|a, b| silhouette(state, a).total_cmp(&silhouette(state, b)).then(b.num_groups().cmp(&a.num_groups())))
            .cloned();

        let mut out: Vec<GroupPartition> = Vec::new();
        let mut add = |p: GroupPartition| {
            if !p.is_empty() && !p.same_sets(incumbent) && !out.iter().any(|q| q.same_sets(&p)) {
                out.push(p);
            }
        };
        if let Some(best) = &best {
            if !wounded.is_empty() && !fit.is_empty() {
                add(best.restrict(&fit).with_trailing(&wounded));
            }
            add(best.clone());
        }
        if !wounded.is_empty() && !fit.is_empty() {
            add(GroupPartition::new(vec![fit.clone(), wounded.clone()]).expect("disjoint groups"));
        }
        clusterings.into_iter().for_each(&mut add);
        // Fallbacks so a persistent human always has something left to try.
        add(GroupPartition::new(alive.iter().map(|&a| vec![a]).collect()).expect("singletons"));
        if !fit.is_empty() {
            let mut groups: Vec<Vec<usize>> = vec![fit.clone()];
            groups.extend(wounded.iter().map(|&a| vec![a]));
            add(GroupPartition::new(groups).expect("disjoint groups"));
        }
        for k in 2..=alive.len().min(4) {
            add(kmeans_partition(state, &alive, k));
        }
        out
    }
}

/// Mean silhouette of a clustering of ally positions; 0 for a single group.
pub fn silhouette(state: &SkirmishState, partition: &GroupPartition) -> f64 {
    if partition.num_groups() < 2 {
        return 0.0;
    }
    let pos = |a: usize| {
        let p = state.allies[a].pos;
        (f64::from(p.0), f64::from(p.1))
    };
    let dist = |a: usize, b: usize| {
        let (p, q) = (pos(a), pos(b));
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    };
    let mean_dist = |a: usize, grp: &[usize]| {
        let others: Vec<usize> = grp.iter().copied().filter(|&b| b != a).collect();
        others.iter().map(|&b| dist(a, b)).sum::<f64>() / others.len().max(1) as f64
    };
    let groups = partition.groups();
    let mut total = 0.0;
    for (gi, grp) in groups.iter().enumerate() {
        for &a in grp {
            if grp.len() == 1 {
                continue;
            }
            let own = mean_dist(a, grp);
            let other = groups
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != gi)
                .map(|(_, g)| mean_dist(a, g))
                .fold(f64::INFINITY, f64::min);
            let denom = own.max(other);
            if denom > 0.0 {
                total += (other - own) / denom;
            }
        }
    }
    total / partition.num_agents() as f64
}

impl HumanChannel for ScriptedOracle {
    fn request(&mut self, session: &AssistSession) -> HumanReply {
        if self.session != Some(session.id) {
            self.session = Some(session.id);
            self.queue = self.candidates(&session.snapshot, &session.partition);
            self.queue.reverse();
        }
        match self.queue.pop() {
            Some(partition) => HumanReply::Propose(Proposal {
                partition,
                actions: oracle_actions(&session.snapshot),
            }),
            None => HumanReply::Abandon,
        }
    }
}

/// Focus fire with a held line: each alive ally attacks the weakest enemy in
/// range (lowest id on ties). Out of range, it holds position while the nearest
/// enemy is one step outside its reach, so that enemy walks into range first;
/// otherwise it steps toward the nearest enemy along the longer axis.
pub fn oracle_actions(state: &SkirmishState) -> BTreeMap<usize, Action> {
    let masks = state.legal_masks();
    let mut out = BTreeMap::new();
    for a in state.alive_allies() {
        let m = &masks[a];
        let me = &state.allies[a];
        let target = (0..state.n_enemies())
            .filter(|&j| m[NUM_BASIC_ACTIONS + j])
            .min_by_key(|&j| (state.enemies[j].health, j));
        let nearest = state
            .enemies
            .iter()
            .filter(|e| e.alive)
            .min_by_key(|e| (chebyshev(me.pos, e.pos), e.id));
        let act = match (target, nearest) {
            (Some(j), _) => Action::Attack(j),
            (None, Some(e)) if chebyshev(me.pos, e.pos) <= me.attack_range + 1 => Action::Stop,
            (None, Some(e)) => Some(step_toward(me.pos, e.pos))
                .filter(|mv| m[mv.index()])
                .unwrap_or(Action::Stop),
            (None, None) => Action::Stop,
        };
        out.insert(a, act);
    }
    out
}

fn step_toward(from: (i32, i32), to: (i32, i32)) -> Action {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    if dx.abs() >= dy.abs() {
        if dx > 0 {
            Action::MoveEast
        } else {
            Action::MoveWest
        }
    } else if dy > 0 {
        Action::MoveSouth
    } else {
        Action::MoveNorth
    }
}

/// Deterministic k-means over ally positions.
///
/// Centres start at the lowest-id agent and then the agent farthest from all
/// chosen centres; ties go to the lower id. Empty clusters are dropped, so the
/// result may have fewer than `k` groups.
pub fn kmeans_partition(state: &SkirmishState, agents: &[usize], k: usize) -> GroupPartition {
    let pos = |a: usize| {
        let p = state.allies[a].pos;
        (f64::from(p.0), f64::from(p.1))
    };
    let dist2 = |p: (f64, f64), c: (f64, f64)| (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2);
    if agents.is_empty() || k == 0 {
        return GroupPartition::new(Vec::new()).expect("empty partition");
    }
    let mut centres = vec![pos(agents[0])];
    while centres.len() < k.min(agents.len()) {
        let far = agents
            .iter()
            .copied()
            .max_by(|&a, &b| {
                let da = centres.iter().map(|&c| dist2(pos(a), c)).fold(f64::INFINITY, f64::min);
                let db = centres.iter().map(|&c| dist2(pos(b), c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("non-empty");
        centres.push(pos(far));
    }
    let mut assign = vec![0usize; agents.len()];
    for _ in 0..20 {
        let next: Vec<usize> = agents
            .iter()
            .map(|&a| {
                (0..centres.len())
                    .min_by(|&i, &j| dist2(pos(a), centres[i]).total_cmp(&dist2(pos(a), centres[j])).then(i.cmp(&j)))
                    .expect("k > 0")
            })
            .collect();
        let changed = next != assign;
        assign = next;
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<(f64, f64)> = agents.iter().zip(&assign).filter(|(_, &g)| g == c).map(|(&a, _)| pos(a)).collect();
            if !members.is_empty() {
                let n = members.len() as f64;
                *centre = (
                    members.iter().map(|p| p.0).sum::<f64>() / n,
                    members.iter().map(|p| p.1).sum::<f64>() / n,
                );
            }
        }
        if !changed {
            break;
        }
    }
    let groups: Vec<Vec<usize>> = (0..centres.len())
        .map(|c| agents.iter().zip(&assign).filter(|(_, &g)| g == c).map(|(&a, _)| a).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    GroupPartition::new(groups).expect("k-means groups are disjoint")
}
