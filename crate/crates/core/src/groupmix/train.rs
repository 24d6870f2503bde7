//! Episode collection, replay and the training schedule.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{td_train_step, EpisodeRecord, LossReport, ReplayBatch};
use super::{agent_q_all, masked_argmax, HarpNet, NetConfig, NetDims};
use crate::env::{reset, Action, ScenarioConfig};
use crate::error::{HarpError, Result};
use crate::grouping::{select_and_kick_capped, ContributionWeights, GroupPartition};
use crate::numcore::{Graph, GruState, ParameterStore, RmsProp, RmsPropConfig, Tensor};

/// Seeds at or above this offset are reserved for evaluation episodes.
pub const EVAL_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Environment steps to train for.
    pub steps: u64,
    pub gamma: f64,
    /// Weight of the critic consistency term.
    pub lambda: f64,
    pub batch_size: usize,
    /// Replay capacity in episodes.
    pub replay_capacity: usize,
    /// Target network sync period in updates.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    /// Run the regrouping sweep after every episode.
    pub regroup: bool,
    /// Cap on the number of groups the sweep may create.
    pub max_groups: Option<usize>,
    /// Greedy evaluation period in environment steps (0 disables).
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub optimizer: RmsPropConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            gamma: 0.99,
            lambda: 0.1,
            batch_size: 32,
            replay_capacity: 5000,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            regroup: true,
            max_groups: Some(3),
            eval_every: 5_000,
            eval_episodes: 31,
            optimizer: RmsPropConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarpError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad("lambda must be a non-negative number");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("batch_size must be positive and no larger than replay_capacity");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must be in [0, 1]");
        }
        if self.max_groups == Some(0) {
            return bad("max_groups must be at least 1");
        }
        if self.optimizer.lr <= 0.0 || self.optimizer.grad_clip <= 0.0 {
            return bad("optimizer lr and grad_clip must be positive");
        }
        Ok(())
    }
}

/// Greedy evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub env_steps: u64,
    pub episodes: usize,
    pub wins: usize,
    pub win_rate: f64,
    pub mean_return: f64,
    pub partition: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Episode {
        episode: u64,
        env_steps: u64,
        episode_return: f64,
        win: bool,
        epsilon: f64,
        partition: String,
        loss: Option<LossReport>,
    },
    Eval(EvalRecord),
}

/// Result of one rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub record: EpisodeRecord,
    pub episode_return: f64,
    pub win: bool,
    /// Mean contribution weight of each agent over the episode.
    pub mean_w1: BTreeMap<usize, f64>,
}

/// ε-greedy rollout of one episode under a fixed partition (`epsilon = 0` is greedy).
pub fn rollout<R: Rng>(
    net: &HarpNet,
    store: &ParameterStore<f64>,
    scenario: &ScenarioConfig,
    env_seed: u64,
    partition: &GroupPartition,
    epsilon: f64,
    rng: &mut R,
) -> Result<Rollout> {
    let n = net.dims.n_agents;
    let agents: Vec<usize> = (0..n).collect();
    let (mut state, mut obs) = reset(scenario, env_seed)?;
    let mut masks = state.legal_masks();
    let mut hidden = vec![GruState::zeros(net.agent.hidden_dim()); n];
    let mut rec = EpisodeRecord {
        observations: vec![obs.clone()],
        masks: vec![masks.clone()],
        states: vec![state.features()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: Vec::new(),
        partition: partition.clone(),
    };
    let mut w1_sum = vec![0.0; n];
    let mut ret = 0.0;
    let win = loop {
        let (qs, next_hidden) = agent_q_all(net, store, &obs, &agents, &hidden)?;
        hidden = next_hidden;
        for (acc, w) in w1_sum.iter_mut().zip(contribution(net, store, &hidden)?) {
            *acc += w;
        }
        let mut joint = Vec::with_capacity(n);
        for a in 0..n {
            let u = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                let legal: Vec<usize> = (0..masks[a].len()).filter(|&i| masks[a][i]).collect();
                legal[rng.gen_range(0..legal.len())]
            } else {
                masked_argmax(&qs[a], &masks[a])?
            };
            joint.push(u);
        }
        let actions: Vec<Action> = joint.iter().map(|&u| Action::from_index(u)).collect();
        let tr = state.step(&actions)?;
        ret += tr.reward;
        rec.actions.push(joint);
        rec.rewards.push(tr.reward);
        rec.terminated.push(tr.terminated);
        rec.observations.push(tr.observations.clone());
        rec.masks.push(tr.masks.clone());
        rec.states.push(tr.next.features());
        obs = tr.observations;
        masks = tr.masks;
        state = tr.next;
        if tr.terminated {
            break tr.win;
        }
    };
    let steps = rec.len() as f64;
    let mean_w1 = w1_sum.into_iter().enumerate().map(|(a, s)| (a, s / steps)).collect();
    Ok(Rollout {
        record: rec,
        episode_return: ret,
        win,
        mean_w1,
    })
}

/// Contribution weights of every agent from its current hidden state.
fn contribution(net: &HarpNet, store: &ParameterStore<f64>, hidden: &[GruState<f64>]) -> Result<Vec<f64>> {
    let rows: Vec<Vec<f64>> = hidden.iter().map(|h| h.hidden.data().to_vec()).collect();
    let mut g = Graph::new();
    let h = g.constant(Tensor::from_rows(&rows)?);
    let w = net.hyper_w1.forward(&mut g, store, h)?;
    Ok(g.value(w).data().to_vec())
}

/// Greedy episode; returns `(return, win)`.
pub fn run_greedy_episode(
    net: &HarpNet,
    store: &ParameterStore<f64>,
    scenario: &ScenarioConfig,
    env_seed: u64,
) -> Result<(f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = GroupPartition::single(net.dims.n_agents);
    let r = rollout(net, store, scenario, env_seed, &p, 0.0, &mut rng)?;
    Ok((r.episode_return, r.win))
}

/// Greedy win rate (%) and mean return over `seeds`.
pub fn evaluate_greedy(
    net: &HarpNet,
    store: &ParameterStore<f64>,
    scenario: &ScenarioConfig,
    seeds: &[u64],
) -> Result<(f64, f64)> {
    let mut wins = 0;
    let mut total = 0.0;
    for &s in seeds {
        let (ret, win) = run_greedy_episode(net, store, scenario, s)?;
        wins += usize::from(win);
        total += ret;
    }
    let k = seeds.len().max(1) as f64;
    Ok((wins as f64 * 100.0 / k, total / k))
}

/// Win rate (%) and mean return of uniformly random legal actions.
pub fn random_policy_win_rate(scenario: &ScenarioConfig, seeds: &[u64], rng_seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut wins = 0;
    let mut total = 0.0;
    for &s in seeds {
        let (mut state, _) = reset(scenario, s)?;
        loop {
            let joint: Vec<Action> = state
                .legal_masks()
                .iter()
                .map(|m| {
                    let legal: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
                    Action::from_index(legal[rng.gen_range(0..legal.len())])
                })
                .collect();
            let tr = state.step(&joint)?;
            total += tr.reward;
            state = tr.next;
            if tr.terminated {
                wins += usize::from(tr.win);
                break;
            }
        }
    }
    let k = seeds.len().max(1) as f64;
    Ok((wins as f64 * 100.0 / k, total / k))
}

/// Evaluation seeds `EVAL_SEED_OFFSET + i`.
pub fn eval_seeds(count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| EVAL_SEED_OFFSET + i).collect()
}

/// Owns the online and target parameters, the optimiser and the replay buffer.
pub struct Trainer {
    pub scenario: ScenarioConfig,
    pub config: TrainConfig,
    pub net: HarpNet,
    pub store: ParameterStore<f64>,
    pub target: ParameterStore<f64>,
    pub partition: GroupPartition,
    pub env_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    opt: RmsProp<f64>,
    replay: VecDeque<EpisodeRecord>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl Trainer {
    pub fn new(scenario: ScenarioConfig, net_config: NetConfig, config: TrainConfig, seed: u64) -> Result<Self> {
        scenario.validate()?;
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = NetDims::for_scenario(&scenario);
        let mut store = ParameterStore::new();
        let net = HarpNet::new(&mut store, dims, net_config, &mut rng)?;
        Ok(Self::from_parts(scenario, config, net, store, seed))
    }

    /// Resumes from existing parameters (e.g. a loaded checkpoint).
    pub fn from_parts(
        scenario: ScenarioConfig,
        config: TrainConfig,
        net: HarpNet,
        store: ParameterStore<f64>,
        seed: u64,
    ) -> Self {
        let opt = RmsProp::new(config.optimizer, &store);
        let partition = GroupPartition::single(net.dims.n_agents);
        Self {
            scenario,
            net,
            target: store.clone(),
            store,
            partition,
            env_steps: 0,
            updates: 0,
            episodes: 0,
            opt,
            replay: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_7a41),
            seed,
            config,
        }
    }

    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        if c.epsilon_anneal_steps == 0 {
            return c.epsilon_end;
        }
        let frac = (self.env_steps as f64 / c.epsilon_anneal_steps as f64).min(1.0);
        c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac
    }

    fn episode_seed(&self) -> u64 {
        // distinct per (run seed, episode) and below the evaluation range
        (self.seed.wrapping_mul(0x9E37_79B9) ^ self.episodes.wrapping_mul(0x85EB_CA6B)) % EVAL_SEED_OFFSET
    }

    pub fn evaluate(&self) -> Result<EvalRecord> {
        let seeds = eval_seeds(self.config.eval_episodes);
        let mut wins = 0;
        let mut total = 0.0;
        for &s in &seeds {
            let (ret, win) = run_greedy_episode(&self.net, &self.store, &self.scenario, s)?;
            wins += usize::from(win);
            total += ret;
        }
        let k = seeds.len().max(1);
        Ok(EvalRecord {
            env_steps: self.env_steps,
            episodes: k,
            wins,
            win_rate: wins as f64 * 100.0 / k as f64,
            mean_return: total / k as f64,
            partition: self.partition.to_string(),
        })
    }

    /// Collects one exploratory episode, trains once if the buffer holds a
    /// batch, and regroups.
    pub fn train_episode(&mut self) -> Result<TrainEvent> {
        let eps = self.epsilon();
        let env_seed = self.episode_seed();
        let ro = rollout(
            &self.net,
            &self.store,
            &self.scenario,
            env_seed,
            &self.partition,
            eps,
            &mut self.rng,
        )?;
        self.env_steps += ro.record.len() as u64;
        self.episodes += 1;
        if self.replay.len() == self.config.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(ro.record);

        let mut loss = None;
        if self.replay.len() >= self.config.batch_size {
            let idx = sample(&mut self.rng, self.replay.len(), self.config.batch_size);
            let batch = ReplayBatch {
                episodes: idx.iter().map(|i| self.replay[i].clone()).collect(),
            };
            let report = td_train_step(
                &self.net,
                &mut self.store,
                &self.target,
                &mut self.opt,
                &batch,
                self.config.gamma,
                self.config.lambda,
            )?;
            self.updates += 1;
            if self.updates % self.config.target_sync == 0 {
                self.target.copy_values_from(&self.store)?;
            }
            loss = Some(report);
        }

        if self.config.regroup {
            let weights = ContributionWeights::from_pairs(ro.mean_w1);
            self.partition = select_and_kick_capped(&self.partition, &weights, self.config.max_groups)?;
        }
        Ok(TrainEvent::Episode {
            episode: self.episodes,
            env_steps: self.env_steps,
            episode_return: ro.episode_return,
            win: ro.win,
            epsilon: eps,
            partition: self.partition.to_string(),
            loss,
        })
    }

    /// Trains until `config.steps` environment steps, reporting every episode
    /// and every periodic evaluation (plus one before and one after training).
    pub fn run(&mut self, mut on_event: impl FnMut(&TrainEvent)) -> Result<EvalRecord> {
        let every = self.config.eval_every;
        on_event(&TrainEvent::Eval(self.evaluate()?));
        let mut next_eval = every;
        while self.env_steps < self.config.steps {
            let ev = self.train_episode()?;
            on_event(&ev);
            if every > 0 && self.env_steps >= next_eval && self.env_steps < self.config.steps {
                on_event(&TrainEvent::Eval(self.evaluate()?));
                next_eval += every;
            }
        }
        let last = self.evaluate()?;
        on_event(&TrainEvent::Eval(last.clone()));
        Ok(last)
    }
}
