//! The built-in scenarios are winnable by a simple script and not by chance.

use harp_core::env::{chebyshev, reset, Action, ScenarioConfig, SkirmishState, NUM_BASIC_ACTIONS};
use harp_core::groupmix::random_policy_win_rate;

/// Attack the weakest enemy in range, otherwise step toward the nearest one.
fn focus_fire(s: &SkirmishState) -> Vec<Action> {
    let masks = s.legal_masks();
    (0..s.n_allies())
        .map(|a| {
            let m = &masks[a];
            if m[0] {
                return Action::Noop;
            }
            let weakest = (0..s.n_enemies())
                .filter(|&j| m[NUM_BASIC_ACTIONS + j])
                .min_by_key(|&j| (s.enemies[j].health, j));
            if let Some(j) = weakest {
                return Action::Attack(j);
            }
            let me = s.allies[a].pos;
            let Some(e) = s.enemies.iter().filter(|u| u.alive).min_by_key(|u| chebyshev(me, u.pos)) else {
                return Action::Stop;
            };
            let (dx, dy) = (e.pos.0 - me.0, e.pos.1 - me.1);
            let step = if dx.abs() >= dy.abs() {
                if dx > 0 {
                    Action::MoveEast
                } else {
                    Action::MoveWest
                }
            } else if dy > 0 {
                Action::MoveSouth
            } else {
                Action::MoveNorth
            };
            if m[step.index()] {
                step
            } else {
                Action::Stop
            }
        })
        .collect()
}

fn focus_fire_win_rate(scenario: &ScenarioConfig, episodes: u64) -> f64 {
    let mut wins = 0;
    for seed in 0..episodes {
        let (mut s, _) = reset(scenario, seed).unwrap();
        loop {
            let tr = s.step(&focus_fire(&s)).unwrap();
            s = tr.next;
            if tr.terminated {
                wins += u64::from(tr.win);
                break;
            }
        }
    }
    wins as f64 * 100.0 / episodes as f64
}

#[test]
fn focus_fire_beats_every_scenario() {
    for name in ["8v8", "5v6", "8v9", "10v12"] {
        let sc = ScenarioConfig::named(name).unwrap();
        let rate = focus_fire_win_rate(&sc, 100);
        assert!(rate >= 90.0, "{name}: focus fire wins {rate}%");
    }
}

#[test]
fn random_play_rarely_wins() {
    for name in ["8v8", "5v6", "8v9", "10v12"] {
        let sc = ScenarioConfig::named(name).unwrap();
        let seeds: Vec<u64> = (0..100).collect();
        let (rate, _) = random_policy_win_rate(&sc, &seeds, 1).unwrap();
        assert!(rate <= 5.0, "{name}: random play wins {rate}%");
    }
}
