//! GridSkirmish: a deterministic two-team grid battle.
//!
//! The learner controls the ally team; enemies follow a fixed script (attack
//! the healthiest ally in range, otherwise step toward the nearest ally). Allies
//! move first (ascending id, blocked moves become `stop`), then ally attacks
//! land, then ally healers act, then every surviving enemy acts. Distances are
//! Chebyshev. Row 0 is the northern edge.

mod scenario;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use scenario::{ScenarioConfig, UnitKind, UnitSpec};

use crate::error::{HarpError, Result};

pub const KILL_BONUS: f64 = 5.0;
pub const WIN_BONUS: f64 = 20.0;
/// Maximum undiscounted episode return.
pub const RETURN_SCALE: f64 = 20.0;

/// Entries per observed unit: `dx, dy, health, team, alive`.
pub const UNIT_FEATURES: usize = 5;
/// Entries per unit in the global state vector: `x, y, health, alive`.
pub const STATE_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Team {
    Ally,
    Enemy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    /// Index within its team.
    pub id: usize,
    pub team: Team,
    pub kind: UnitKind,
    pub pos: (i32, i32),
    pub health: u32,
    pub max_health: u32,
    pub attack_power: u32,
    pub attack_range: u32,
    pub heal_power: u32,
    pub alive: bool,
}

impl Unit {
    fn from_spec(id: usize, team: Team, spec: &UnitSpec, pos: (i32, i32)) -> Self {
        Self {
            id,
            team,
            kind: spec.kind,
            pos,
            health: spec.max_health,
            max_health: spec.max_health,
            attack_power: spec.attack_power,
            attack_range: spec.attack_range,
            heal_power: spec.heal_power,
            alive: true,
        }
    }

    pub fn health_fraction(&self) -> f64 {
        f64::from(self.health) / f64::from(self.max_health.max(1))
    }

    fn take_damage(&mut self, amount: u32) -> (u32, bool) {
        let dealt = amount.min(self.health);
        self.health -= dealt;
        let killed = self.alive && self.health == 0;
        if killed {
            self.alive = false;
        }
        (dealt, killed)
    }
}

pub fn chebyshev(a: (i32, i32), b: (i32, i32)) -> u32 {
    (a.0 - b.0).unsigned_abs().max((a.1 - b.1).unsigned_abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Noop,
    Stop,
    MoveNorth,
    MoveSouth,
    MoveEast,
    MoveWest,
    /// Attack the enemy with this team index.
    Attack(usize),
}

pub const NUM_BASIC_ACTIONS: usize = 6;

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Noop => 0,
            Action::Stop => 1,
            Action::MoveNorth => 2,
            Action::MoveSouth => 3,
            Action::MoveEast => 4,
            Action::MoveWest => 5,
            Action::Attack(j) => NUM_BASIC_ACTIONS + j,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            0 => Action::Noop,
            1 => Action::Stop,
            2 => Action::MoveNorth,
            3 => Action::MoveSouth,
            4 => Action::MoveEast,
            5 => Action::MoveWest,
            j => Action::Attack(j - NUM_BASIC_ACTIONS),
        }
    }

    /// Wire identifier (`attack` carries its target separately).
    pub fn name(self) -> &'static str {
        match self {
            Action::Noop => "noop",
            Action::Stop => "stop",
            Action::MoveNorth => "move_north",
            Action::MoveSouth => "move_south",
            Action::MoveEast => "move_east",
            Action::MoveWest => "move_west",
            Action::Attack(_) => "attack",
        }
    }

    pub fn target(self) -> Option<usize> {
        match self {
            Action::Attack(j) => Some(j),
            _ => None,
        }
    }

    pub fn from_name(name: &str, target: Option<usize>) -> Result<Self> {
        let a = match (name, target) {
            ("noop", None) => Action::Noop,
            ("stop", None) => Action::Stop,
            ("move_north", None) => Action::MoveNorth,
            ("move_south", None) => Action::MoveSouth,
            ("move_east", None) => Action::MoveEast,
            ("move_west", None) => Action::MoveWest,
            ("attack", Some(j)) => Action::Attack(j),
            ("attack", None) => return Err(HarpError::Protocol("attack requires a target".into())),
            (n, Some(_)) if n != "attack" => {
                return Err(HarpError::Protocol(format!("action {n} takes no target")))
            }
            (n, _) => return Err(HarpError::Protocol(format!("unknown action {n:?}"))),
        };
        Ok(a)
    }

    /// Grid offset of a move; `None` for every other action.
    pub fn delta(self) -> Option<(i32, i32)> {
        match self {
            Action::MoveNorth => Some((0, -1)),
            Action::MoveSouth => Some((0, 1)),
            Action::MoveEast => Some((1, 0)),
            Action::MoveWest => Some((-1, 0)),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Attack(j) => write!(f, "attack({j})"),
            a => f.write_str(a.name()),
        }
    }
}

/// Size of the per-agent action space for `n_enemies` enemies.
pub fn num_actions(n_enemies: usize) -> usize {
    NUM_BASIC_ACTIONS + n_enemies
}

/// Length of one agent's observation vector.
pub fn observation_dim(n_allies: usize, n_enemies: usize) -> usize {
    1 + (n_allies + n_enemies - 1) * UNIT_FEATURES
}

pub fn state_dim(n_allies: usize, n_enemies: usize) -> usize {
    (n_allies + n_enemies) * STATE_FEATURES + 1
}

pub type Observation = Vec<f64>;

/// Full environment state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkirmishState {
    pub grid_w: u32,
    pub grid_h: u32,
    pub sight_range: u32,
    pub allies: Vec<Unit>,
    pub enemies: Vec<Unit>,
    pub t: u32,
    pub step_limit: u32,
}

/// Result of one [`SkirmishState::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: SkirmishState,
    pub reward: f64,
    pub terminated: bool,
    pub win: bool,
    pub observations: Vec<Observation>,
    pub masks: Vec<Vec<bool>>,
    pub damage_dealt: u32,
    pub kills: u32,
}

/// Places units for `scenario`; start cells are drawn from each team's band using `seed`.
pub fn reset(scenario: &ScenarioConfig, seed: u64) -> Result<(SkirmishState, Vec<Observation>)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = scenario.band_width.min(scenario.grid_w / 2) as i32;
    let (w, h) = (scenario.grid_w as i32, scenario.grid_h as i32);
    let cells = |x0: i32| -> Vec<(i32, i32)> {
        (x0..x0 + band).flat_map(|x| (0..h).map(move |y| (x, y))).collect()
    };
    let mut left = cells(0);
    let mut right = cells(w - band);
    left.shuffle(&mut rng);
    right.shuffle(&mut rng);
    let allies = scenario
        .allies
        .iter()
        .enumerate()
        .map(|(i, s)| Unit::from_spec(i, Team::Ally, s, left[i]))
        .collect();
    let enemies = scenario
        .enemies
        .iter()
        .enumerate()
        .map(|(i, s)| Unit::from_spec(i, Team::Enemy, s, right[i]))
        .collect();
    let state = SkirmishState {
        grid_w: scenario.grid_w,
        grid_h: scenario.grid_h,
        sight_range: scenario.sight_range,
        allies,
        enemies,
        t: 0,
        step_limit: scenario.step_limit,
    };
    let obs = state.observations();
    Ok((state, obs))
}

impl SkirmishState {
    pub fn n_allies(&self) -> usize {
        self.allies.len()
    }

    pub fn n_enemies(&self) -> usize {
        self.enemies.len()
    }

    pub fn num_actions(&self) -> usize {
        num_actions(self.enemies.len())
    }

    pub fn alive_allies(&self) -> Vec<usize> {
        self.allies.iter().filter(|u| u.alive).map(|u| u.id).collect()
    }

    pub fn is_won(&self) -> bool {
        self.enemies.iter().all(|u| !u.alive)
    }

    pub fn is_lost(&self) -> bool {
        self.allies.iter().all(|u| !u.alive)
    }

    pub fn is_terminal(&self) -> bool {
        self.is_won() || self.is_lost() || self.t >= self.step_limit
    }

    /// Normaliser so that a flawless win sums to [`RETURN_SCALE`].
    pub fn max_possible_reward(&self) -> f64 {
        let health: u32 = self.enemies.iter().map(|u| u.max_health).sum();
        f64::from(health) + KILL_BONUS * self.enemies.len() as f64 + WIN_BONUS
    }

    fn in_bounds(&self, p: (i32, i32)) -> bool {
        p.0 >= 0 && p.1 >= 0 && p.0 < self.grid_w as i32 && p.1 < self.grid_h as i32
    }

    fn occupied(&self, p: (i32, i32)) -> bool {
        self.allies
            .iter()
            .chain(&self.enemies)
            .any(|u| u.alive && u.pos == p)
    }

    /// Legal-action mask for ally `agent`.
    pub fn legal_actions(&self, agent: usize) -> Result<Vec<bool>> {
        let unit = self
            .allies
            .get(agent)
            .ok_or_else(|| HarpError::Lookup(format!("unknown agent id {agent}")))?;
        let mut mask = vec![false; self.num_actions()];
        if !unit.alive {
            mask[Action::Noop.index()] = true;
            return Ok(mask);
        }
        mask[Action::Stop.index()] = true;
        for a in [Action::MoveNorth, Action::MoveSouth, Action::MoveEast, Action::MoveWest] {
            let (dx, dy) = a.delta().unwrap();
            mask[a.index()] = self.in_bounds((unit.pos.0 + dx, unit.pos.1 + dy));
        }
        if unit.attack_power > 0 {
            for e in &self.enemies {
                if e.alive && chebyshev(unit.pos, e.pos) <= unit.attack_range {
                    mask[Action::Attack(e.id).index()] = true;
                }
            }
        }
        Ok(mask)
    }

    pub fn legal_masks(&self) -> Vec<Vec<bool>> {
        (0..self.allies.len())
            .map(|a| self.legal_actions(a).expect("ally index in range"))
            .collect()
    }

    fn observe(&self, agent: usize) -> Observation {
        let me = &self.allies[agent];
        let mut obs = vec![0.0; observation_dim(self.allies.len(), self.enemies.len())];
        if !me.alive {
            return obs;
        }
        obs[0] = me.health_fraction();
        let sight = f64::from(self.sight_range);
        let others = self
            .allies
            .iter()
            .filter(|u| u.id != agent)
            .chain(&self.enemies);
        for (k, u) in others.enumerate() {
            if !u.alive || chebyshev(me.pos, u.pos) > self.sight_range {
                continue;
            }
            let base = 1 + k * UNIT_FEATURES;
            obs[base] = f64::from(u.pos.0 - me.pos.0) / sight;
            obs[base + 1] = f64::from(u.pos.1 - me.pos.1) / sight;
            obs[base + 2] = u.health_fraction();
            obs[base + 3] = if u.team == Team::Ally { 1.0 } else { -1.0 };
            obs[base + 4] = 1.0;
        }
        obs
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.allies.len()).map(|a| self.observe(a)).collect()
    }

    /// Global state vector: per unit `x, y, health, alive` (allies then enemies) and `t`.
    pub fn features(&self) -> Vec<f64> {
        let wx = f64::from(self.grid_w.saturating_sub(1).max(1));
        let wy = f64::from(self.grid_h.saturating_sub(1).max(1));
        let mut out = Vec::with_capacity(state_dim(self.allies.len(), self.enemies.len()));
        for u in self.allies.iter().chain(&self.enemies) {
            if u.alive {
                out.extend([
                    f64::from(u.pos.0) / wx,
                    f64::from(u.pos.1) / wy,
                    u.health_fraction(),
                    1.0,
                ]);
            } else {
                out.extend([0.0; STATE_FEATURES]);
            }
        }
        out.push(f64::from(self.t) / f64::from(self.step_limit.max(1)));
        out
    }

    fn nearest(from: (i32, i32), candidates: &[Unit]) -> Option<&Unit> {
        candidates
            .iter()
            .filter(|u| u.alive)
            .min_by_key(|u| (chebyshev(from, u.pos), u.id))
    }

    /// Pure transition: validates `joint`, resolves ally then enemy phases.
    pub fn step(&self, joint: &[Action]) -> Result<Transition> {
        if self.is_terminal() {
            return Err(HarpError::Protocol("step on a terminated episode".into()));
        }
        if joint.len() != self.allies.len() {
            return Err(HarpError::Protocol(format!(
                "joint action has {} entries for {} agents",
                joint.len(),
                self.allies.len()
            )));
        }
        for (agent, &a) in joint.iter().enumerate() {
            let mask = self.legal_actions(agent)?;
            if a.index() >= mask.len() || !mask[a.index()] {
                return Err(HarpError::Protocol(format!("illegal action {a} for agent {agent}")));
            }
        }
        let mut s = self.clone();

        for (agent, &a) in joint.iter().enumerate() {
            if let Some((dx, dy)) = a.delta() {
                let p = s.allies[agent].pos;
                let q = (p.0 + dx, p.1 + dy);
                if s.in_bounds(q) && !s.occupied(q) {
                    s.allies[agent].pos = q;
                }
            }
        }

        let mut damage = 0u32;
        let mut kills = 0u32;
        for (agent, &a) in joint.iter().enumerate() {
            if let Action::Attack(j) = a {
                let power = s.allies[agent].attack_power;
                let (d, k) = s.enemies[j].take_damage(power);
                damage += d;
                kills += u32::from(k);
            }
        }

        Self::heal_phase(&mut s.allies);

        if !s.is_won() {
            for e in 0..s.enemies.len() {
                if !s.enemies[e].alive {
                    continue;
                }
                let me = s.enemies[e].clone();
                if me.attack_power > 0 {
                    let in_range = s
                        .allies
                        .iter()
                        .filter(|u| u.alive && chebyshev(me.pos, u.pos) <= me.attack_range)
                        .max_by_key(|u| (u.health, std::cmp::Reverse(u.id)))
                        .map(|u| u.id);
                    if let Some(target) = in_range {
                        s.allies[target].take_damage(me.attack_power);
                        continue;
                    }
                }
                if let Some(goal) = Self::nearest(me.pos, &s.allies).map(|u| u.pos) {
                    if let Some(q) = s.step_toward(me.pos, goal) {
                        s.enemies[e].pos = q;
                    }
                }
            }
            Self::heal_phase(&mut s.enemies);
        }

        s.t += 1;
        let win = s.is_won();
        let terminated = s.is_terminal();
        let raw = f64::from(damage) + KILL_BONUS * f64::from(kills) + if win { WIN_BONUS } else { 0.0 };
        let reward = raw * RETURN_SCALE / s.max_possible_reward();
        let observations = s.observations();
        let masks = s.legal_masks();
        Ok(Transition {
            next: s,
            reward,
            terminated,
            win,
            observations,
            masks,
            damage_dealt: damage,
            kills,
        })
    }

    /// Each living healer restores the most-damaged adjacent teammate.
    fn heal_phase(team: &mut [Unit]) {
        for h in 0..team.len() {
            let healer = &team[h];
            if !healer.alive || healer.heal_power == 0 {
                continue;
            }
            let (pos, power, range) = (healer.pos, healer.heal_power, healer.attack_range);
            let target = team
                .iter()
                .filter(|u| u.alive && u.id != h && u.health < u.max_health)
                .filter(|u| chebyshev(pos, u.pos) <= range)
                .max_by_key(|u| (u.max_health - u.health, std::cmp::Reverse(u.id)))
                .map(|u| u.id);
            if let Some(t) = target {
                let u = &mut team[t];
                u.health = (u.health + power).min(u.max_health);
            }
        }
    }

    /// One orthogonal step reducing the larger axis gap first; `None` if blocked.
    fn step_toward(&self, from: (i32, i32), goal: (i32, i32)) -> Option<(i32, i32)> {
        let (dx, dy) = (goal.0 - from.0, goal.1 - from.1);
        let horiz = (from.0 + dx.signum(), from.1);
        let vert = (from.0, from.1 + dy.signum());
        let order = if dx.abs() >= dy.abs() { [horiz, vert] } else { [vert, horiz] };
        order
            .into_iter()
            .filter(|&q| q != from)
            .find(|&q| self.in_bounds(q) && !self.occupied(q))
    }
}
