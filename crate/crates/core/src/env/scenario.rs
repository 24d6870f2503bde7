use serde::{Deserialize, Serialize};

use crate::error::{HarpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Marine,
    Marauder,
    /// Deals no damage; restores health of an adjacent wounded teammate each step.
    Healer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub kind: UnitKind,
    pub max_health: u32,
    pub attack_power: u32,
    pub attack_range: u32,
    pub heal_power: u32,
}

impl UnitSpec {
    pub const MARINE: Self = Self {
        kind: UnitKind::Marine,
        max_health: 45,
        attack_power: 6,
        attack_range: 2,
        heal_power: 0,
    };
    pub const MARAUDER: Self = Self {
        kind: UnitKind::Marauder,
        max_health: 125,
        attack_power: 10,
        attack_range: 2,
        heal_power: 0,
    };
    /// Same unit with one extra cell of attack range (healers are unchanged).
    pub fn long_range(self) -> Self {
        if self.attack_power == 0 {
            return self;
        }
        Self {
            attack_range: self.attack_range + 1,
            ..self
        }
    }

    pub const HEALER: Self = Self {
        kind: UnitKind::Healer,
        max_health: 150,
        attack_power: 0,
        attack_range: 1,
        heal_power: 9,
    };
}

/// Team sizes, unit stats, board size and step limit of one skirmish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub grid_w: u32,
    pub grid_h: u32,
    pub step_limit: u32,
    pub sight_range: u32,
    /// Width in columns of each team's start band.
    pub band_width: u32,
    pub allies: Vec<UnitSpec>,
    pub enemies: Vec<UnitSpec>,
    /// Hint for the assist trigger: heterogeneous teams weight inter-group variance more.
    pub heterogeneous: bool,
}

impl ScenarioConfig {
    /// Built-in roster: `8v8` (easy), `5v6` and `8v9` (hard), `10v12` (heterogeneous, hardest).
    ///
    /// Allied units outrange their enemy counterparts by one cell; the scripted
    /// enemies spread fire onto the healthiest target, so disciplined focus fire
    /// wins while aimless play loses.
    pub fn named(name: &str) -> Result<Self> {
        let marines = |n: usize| vec![UnitSpec::MARINE; n];
        let base = |name: &str, w, h, allies: Vec<UnitSpec>, enemies| Self {
            name: name.to_string(),
            grid_w: w,
            grid_h: h,
            step_limit: 60,
            sight_range: 6,
            band_width: 2,
            allies: allies.into_iter().map(UnitSpec::long_range).collect(),
            enemies,
            heterogeneous: false,
        };
        Ok(match name {
            "8v8" => base("8v8", 12, 8, marines(8), marines(8)),
            "5v6" => base("5v6", 12, 6, marines(5), marines(6)),
            "8v9" => base("8v9", 12, 8, marines(8), marines(9)),
            "10v12" => {
                let mut allies = marines(7);
                allies.extend([UnitSpec::MARAUDER, UnitSpec::MARAUDER, UnitSpec::HEALER]);
                let mut enemies = marines(9);
                enemies.extend([UnitSpec::MARAUDER, UnitSpec::MARAUDER, UnitSpec::MARAUDER]);
                Self {
                    heterogeneous: true,
                    step_limit: 80,
                    ..base("10v12", 14, 10, allies, enemies)
                }
            }
            other => return Err(HarpError::Config(format!("unknown scenario {other:?}"))),
        })
    }

    pub fn n_allies(&self) -> usize {
        self.allies.len()
    }

    pub fn n_enemies(&self) -> usize {
        self.enemies.len()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HarpError::Config(m));
        if self.allies.is_empty() {
            return cfg(format!("scenario {} has no allies", self.name));
        }
        if self.enemies.is_empty() {
            return cfg(format!("scenario {} has no enemies", self.name));
        }
        if self.grid_w == 0 || self.grid_h == 0 || self.step_limit == 0 || self.sight_range == 0 {
            return cfg(format!("scenario {} has a zero-sized dimension", self.name));
        }
        let cells = (self.grid_w * self.grid_h) as usize;
        if self.allies.len() + self.enemies.len() > cells {
            return cfg(format!(
                "scenario {} places {} units on {} cells",
                self.name,
                self.allies.len() + self.enemies.len(),
                cells
            ));
        }
        let band = (self.band_width.min(self.grid_w / 2) * self.grid_h) as usize;
        if self.allies.len() > band || self.enemies.len() > band {
            return cfg(format!(
                "scenario {} start bands hold {} units but a team has {}",
                self.name,
                band,
                self.allies.len().max(self.enemies.len())
            ));
        }
        if self
            .allies
            .iter()
            .chain(&self.enemies)
            .any(|u| u.max_health == 0)
        {
            return cfg(format!("scenario {} has a unit with zero health", self.name));
        }
        Ok(())
    }
}
