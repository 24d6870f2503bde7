use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::env::UnitSpec;
use crate::groupmix::{rollout, NetConfig, NetDims};
use crate::pigc::CriticConfig;

fn tiny_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "3v2".into(),
        grid_w: 6,
        grid_h: 4,
        step_limit: 12,
        sight_range: 4,
        band_width: 2,
        allies: vec![UnitSpec::MARINE.long_range(); 3],
        enemies: vec![UnitSpec::MARINE; 2],
        heterogeneous: false,
    }
}

fn build(seed: u64) -> (HarpNet, ParameterStore<f64>) {
    let config = NetConfig {
        encoder_dim: 5,
        hidden_dim: 4,
        hyper_dim: 3,
        mixer_dim: 3,
        critic: CriticConfig { layers: 2, width: 3 },
    };
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = HarpNet::new(&mut store, NetDims::for_scenario(&tiny_scenario()), config, &mut rng).unwrap();
    (net, store)
}

fn report(combined: f64) -> VarianceReport {
    VarianceReport {
        intra: 0.0,
        inter: 0.0,
        combined,
        alpha: 0.5,
        beta: 0.5,
    }
}

fn queue_with(capacity: usize, values: &[f64]) -> VarianceQueue {
    let mut q = VarianceQueue::new(capacity);
    q.values = BoundedQueue::from_values(capacity, values.iter().copied());
    q
}

fn open_session(net: &HarpNet, store: &ParameterStore<f64>) -> AssistSession {
    let (state, _) = reset(&tiny_scenario(), 4).unwrap();
    let hidden: BTreeMap<usize, Tensor<f64>> = (0..3)
        .map(|a| (a, Tensor::vector(vec![0.1 * a as f64, -0.2, 0.3, 0.05 * a as f64])))
        .collect();
    let partition = GroupPartition::new(vec![vec![0, 1], vec![2]]).unwrap();
    AssistSession::open(7, state, &partition, hidden, report(0.0), &net.critic, store).unwrap()
}

fn stop_all(n: usize) -> BTreeMap<usize, Action> {
    (0..n).map(|a| (a, Action::Stop)).collect()
}

#[test]
fn variance_of_one_pair() {
    let p = GroupPartition::new(vec![vec![0, 1]]).unwrap();
    let qs = BTreeMap::from([(0, 1.0), (1, 3.0)]);
    assert_eq!(raw_variance(&p, &qs, &[2.0]).unwrap(), (1.0, 0.0));
}

#[test]
fn variance_rejects_mismatched_group_values() {
    let p = GroupPartition::new(vec![vec![0], vec![1]]).unwrap();
    let qs = BTreeMap::from([(0, 1.0), (1, 3.0)]);
    assert!(matches!(raw_variance(&p, &qs, &[2.0]), Err(HarpError::Contract(_))));
    let missing = BTreeMap::from([(0, 1.0)]);
    assert!(matches!(raw_variance(&p, &missing, &[1.0, 2.0]), Err(HarpError::Lookup(_))));
}

#[test]
fn normalisation_of_flat_history_is_zero() {
    let q = BoundedQueue::from_values(4, [2.0, 2.0]);
    assert_eq!(min_max_normalize(2.0, &q), 0.0);
    let q = BoundedQueue::from_values(4, [1.0, 3.0, 2.0]);
    assert_eq!(min_max_normalize(2.0, &q), 0.5);
}

#[test]
fn bounded_queue_evicts_oldest() {
    let q = BoundedQueue::from_values(3, [1.0, 2.0, 3.0, 4.0]);
    assert_eq!(q.values(), vec![2.0, 3.0, 4.0]);
    assert!(q.is_full());
}

#[test]
fn empty_history_never_fires() {
    let mut q = VarianceQueue::default();
    assert!(!should_request_help(&report(100.0), &mut q));
    assert_eq!(q.values.values(), vec![100.0]);
}

#[test]
fn full_history_fires_at_its_maximum() {
    let mut q = queue_with(3, &[1.0, 2.0, 3.0]);
    assert!(should_request_help(&report(3.0), &mut q));
    assert_eq!(q.values.values(), vec![2.0, 3.0, 3.0]);
    assert!(!should_request_help(&report(2.5), &mut q));
}

#[test]
fn partial_history_records_and_stays_quiet() {
    let mut q = queue_with(10, &[1.0, 2.0, 3.0]);
    assert!(!should_request_help(&report(2.9), &mut q));
    assert_eq!(q.values.values(), vec![1.0, 2.0, 3.0, 2.9]);
}

#[test]
fn participation_fraction() {
    assert_eq!(participation(0, 0), 0.0);
    assert!((participation(8, 306) - 0.026_143_790_849_673_2).abs() < 1e-15);
}

#[test]
fn incumbent_partition_is_rejected_on_a_tie() {
    let (net, store) = build(1);
    let mut s = open_session(&net, &store);
    let same = Proposal {
        partition: GroupPartition::new(vec![vec![2], vec![1, 0]]).unwrap(),
        actions: stop_all(3),
    };
    let v = evaluate_proposal(&mut s, same, &net.critic, &store).unwrap();
    assert_eq!(v.verdict, VerdictKind::Reject);
    assert_eq!(v.proposal_score, v.incumbent_score);
    assert_eq!(s.status, SessionStatus::Open);
}

#[test]
fn higher_score_is_accepted_and_closes_the_session() {
    let (net, store) = build(1);
    let mut s = open_session(&net, &store);
    let candidates = [
        vec![vec![0, 1, 2]],
        vec![vec![0], vec![1], vec![2]],
        vec![vec![0, 2], vec![1]],
        vec![vec![1, 2], vec![0]],
    ];
    let mut accepted = false;
    for groups in candidates {
        let p = Proposal {
            partition: GroupPartition::new(groups).unwrap(),
            actions: stop_all(3),
        };
        let v = evaluate_proposal(&mut s, p, &net.critic, &store).unwrap();
        assert_eq!(v.verdict == VerdictKind::Accept, v.proposal_score > v.incumbent_score);
        if v.verdict == VerdictKind::Accept {
            accepted = true;
            break;
        }
    }
    assert!(accepted, "some regrouping should beat the incumbent");
    assert_eq!(s.status, SessionStatus::Accepted);
    let again = Proposal {
        partition: GroupPartition::single(3),
        actions: stop_all(3),
    };
    match evaluate_proposal(&mut s, again, &net.critic, &store) {
        Err(HarpError::Protocol(m)) => assert_eq!(m, "no open session"),
        other => panic!("expected protocol error, got {other:?}"),
    }
}

#[test]
fn invalid_proposals_are_recorded_but_not_scored() {
    let (net, store) = build(1);
    let mut s = open_session(&net, &store);
    let missing_agent = Proposal {
        partition: GroupPartition::new(vec![vec![0, 1]]).unwrap(),
        actions: stop_all(3),
    };
    assert!(matches!(
        evaluate_proposal(&mut s, missing_agent, &net.critic, &store),
        Err(HarpError::Protocol(_))
    ));
    let mut actions = stop_all(3);
    actions.insert(1, Action::Attack(0));
    let illegal = Proposal {
        partition: GroupPartition::single(3),
        actions,
    };
    let legal_attack = s.masks[1][Action::Attack(0).index()];
    assert!(!legal_attack, "fixture expects enemies out of range at reset");
    assert!(evaluate_proposal(&mut s, illegal, &net.critic, &store).is_err());
    assert_eq!(s.attempts.len(), 2);
    assert!(s.attempts.iter().all(|a| matches!(a.outcome, AttemptOutcome::Invalid(_))));
    assert_eq!(s.status, SessionStatus::Open);
    assert_eq!(s.remaining(5), 3);
}

#[test]
fn abandon_closes_without_accepting() {
    let (net, store) = build(1);
    let mut s = open_session(&net, &store);
    s.abandon();
    assert_eq!(s.status, SessionStatus::Abandoned);
    let p = Proposal {
        partition: GroupPartition::single(3),
        actions: stop_all(3),
    };
    assert!(matches!(
        evaluate_proposal(&mut s, p, &net.critic, &store),
        Err(HarpError::Protocol(_))
    ));
}

fn deploy_trace(
    net: &HarpNet,
    store: &ParameterStore<f64>,
    seed: u64,
    capacity: usize,
    channel: &mut dyn HumanChannel,
) -> (EpisodeStats, Vec<Vec<usize>>, Vec<SessionRecord>) {
    let config = DeployConfig {
        queue_capacity: capacity,
        ..DeployConfig::default()
    };
    let mut d = Deployment::new(net, store, tiny_scenario(), config, GroupPartition::single(3)).unwrap();
    let mut actions = Vec::new();
    let mut sessions = Vec::new();
    let stats = d
        .run_episode(seed, channel, &mut |e| match e {
            DeployEvent::Step { actions: a, .. } => actions.push(a.iter().map(|x| x.index()).collect()),
            DeployEvent::Session(r) => sessions.push(r.clone()),
            DeployEvent::EpisodeEnd(_) => {}
        })
        .unwrap();
    (stats, actions, sessions)
}

#[test]
fn always_abandon_matches_greedy_rollout() {
    let (net, store) = build(2);
    for seed in 0..6 {
        let (stats, actions, sessions) = deploy_trace(&net, &store, seed, 2, &mut AbandonChannel);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let greedy = rollout(&net, &store, &tiny_scenario(), seed, &GroupPartition::single(3), 0.0, &mut rng).unwrap();
        assert_eq!(actions, greedy.record.actions);
        assert_eq!(stats.win, greedy.win);
        assert_eq!(stats.episode_return, greedy.episode_return);
        assert_eq!(stats.accepted, 0);
        assert_eq!(stats.interventions as usize, sessions.len());
        assert!(sessions.iter().all(|s| s.status == SessionStatus::Abandoned));
    }
}

/// Proposes the same invalid partition forever.
struct Stubborn;

impl HumanChannel for Stubborn {
    fn request(&mut self, _session: &AssistSession) -> HumanReply {
        HumanReply::Propose(Proposal {
            partition: GroupPartition::new(vec![vec![0]]).unwrap(),
            actions: BTreeMap::new(),
        })
    }
}

#[test]
fn retry_budget_ends_a_session() {
    let (net, store) = build(2);
    let (stats, _, sessions) = deploy_trace(&net, &store, 1, 2, &mut Stubborn);
    assert!(stats.interventions > 0, "capacity-2 history should trigger");
    for s in &sessions {
        assert_eq!(s.attempts.len(), DeployConfig::default().retry_budget);
        assert_eq!(s.status, SessionStatus::Abandoned);
        assert_eq!(s.note.as_deref(), Some("retry budget exhausted"));
    }
}

#[test]
fn oracle_sessions_are_consistent() {
    let (net, store) = build(3);
    for seed in 0..4 {
        let mut oracle = ScriptedOracle::new();
        let (stats, _, sessions) = deploy_trace(&net, &store, seed, 2, &mut oracle);
        assert_eq!(stats.interventions as usize, sessions.len());
        let accepted = sessions.iter().filter(|s| s.status == SessionStatus::Accepted).count();
        assert_eq!(stats.accepted as usize, accepted);
        for s in &sessions {
            assert!(s.attempts.len() <= 5);
            assert!(s
                .attempts
                .iter()
                .all(|a| matches!(a.outcome, AttemptOutcome::Scored(_))));
        }
    }
}

#[test]
fn kmeans_separates_distant_clusters() {
    let (mut state, _) = reset(&tiny_scenario(), 0).unwrap();
    state.allies[0].pos = (0, 0);
    state.allies[1].pos = (5, 3);
    state.allies[2].pos = (0, 1);
    let p = kmeans_partition(&state, &[0, 1, 2], 2);
    assert!(p.same_sets(&GroupPartition::new(vec![vec![0, 2], vec![1]]).unwrap()));
    assert_eq!(kmeans_partition(&state, &[0, 1, 2], 1).num_groups(), 1);
}

#[test]
fn oracle_candidates_skip_the_incumbent() {
    let (mut state, _) = reset(&tiny_scenario(), 0).unwrap();
    state.allies[0].pos = (0, 0);
    state.allies[1].pos = (5, 3);
    state.allies[2].pos = (0, 1);
    let incumbent = GroupPartition::new(vec![vec![1], vec![2, 0]]).unwrap();
    let cands = ScriptedOracle::new().candidates(&state, &incumbent);
    assert!(!cands.is_empty());
    assert!(cands.iter().all(|c| !c.same_sets(&incumbent)));
    for c in &cands {
        c.check_covers(&[0, 1, 2]).unwrap();
    }
}

#[test]
fn oracle_actions_are_legal() {
    let scenario = tiny_scenario();
    for seed in 0..5 {
        let (mut state, _) = reset(&scenario, seed).unwrap();
        loop {
            let masks = state.legal_masks();
            let acts = oracle_actions(&state);
            let joint: Vec<Action> = (0..3).map(|a| acts.get(&a).copied().unwrap_or(Action::Noop)).collect();
            for (a, act) in joint.iter().enumerate() {
                assert!(masks[a][act.index()], "agent {a} {act}");
            }
            let tr = state.step(&joint).unwrap();
            state = tr.next;
            if tr.terminated {
                break;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn variance_ignores_listing_order(
        qs in proptest::collection::vec(-5.0f64..5.0, 4),
        gq in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        let agent_qs: BTreeMap<usize, f64> = qs.iter().copied().enumerate().collect();
        let a = GroupPartition::new(vec![vec![0, 1, 2], vec![3]]).unwrap();
        let b = GroupPartition::new(vec![vec![3], vec![2, 0, 1]]).unwrap();
        let (ia, ea) = raw_variance(&a, &agent_qs, &gq).unwrap();
        let (ib, eb) = raw_variance(&b, &agent_qs, &[gq[1], gq[0]]).unwrap();
        prop_assert!((ia - ib).abs() < 1e-12 && (ea - eb).abs() < 1e-12);
        prop_assert!(ia >= 0.0 && ea >= 0.0);
    }

    #[test]
    fn combined_variance_stays_in_weight_range(
        seq in proptest::collection::vec((0.0f64..10.0, 0.0f64..10.0), 1..30),
    ) {
        let mut q = VarianceQueue::new(10);
        let p = GroupPartition::new(vec![vec![0], vec![1]]).unwrap();
        for (x, y) in seq {
            let agent_qs = BTreeMap::from([(0, x), (1, y)]);
            let r = group_variance(&p, &agent_qs, &[x, y], 0.3, 0.7, &mut q).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&r.combined));
            prop_assert!(q.values.len() <= 10);
            should_request_help(&r, &mut q);
        }
    }
}
