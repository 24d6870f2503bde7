use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::Duration;

use harp_core::deploy::{
    AbandonChannel, DeployConfig, DeployEvent, Deployment, EpisodeStats, HumanChannel, SessionRecord, SessionStatus,
    VarianceReport, VerdictKind,
};
use harp_core::env::{reset, ScenarioConfig, UnitSpec};
use harp_core::groupmix::{HarpNet, NetConfig, NetDims};
use harp_core::grouping::GroupPartition;
use harp_core::pigc::CriticConfig;
use harp_core::ParameterStore;
use harp_service::protocol::decode_server;
use harp_service::{health_pct, snapshot_payload, CloseOutcome, ServeConfig, Server, ServerMessage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn scenario() -> ScenarioConfig {
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

fn build(seed: u64) -> (HarpNet, ParameterStore) {
    let config = NetConfig {
        encoder_dim: 6,
        hidden_dim: 5,
        hyper_dim: 4,
        mixer_dim: 4,
        critic: CriticConfig { layers: 2, width: 4 },
    };
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = HarpNet::new(&mut store, NetDims::for_scenario(&scenario()), config, &mut rng).unwrap();
    // A positive readout bias makes every extra group add score, so splitting
    // the team always beats keeping it together.
    let b = store.value_mut(net.critic.readout.b);
    b.data_mut().fill(5.0);
    (net, store)
}

struct Run {
    stats: Vec<EpisodeStats>,
    sessions: Vec<SessionRecord>,
    actions: Vec<Vec<usize>>,
}

fn deploy(channel: &mut dyn HumanChannel, episodes: u64, net_seed: u64) -> Run {
    let (net, store) = build(net_seed);
    let config = DeployConfig {
        queue_capacity: 2,
        ..DeployConfig::default()
    };
    let mut d = Deployment::new(&net, &store, scenario(), config, GroupPartition::single(3)).unwrap();
    let mut run = Run {
        stats: Vec::new(),
        sessions: Vec::new(),
        actions: Vec::new(),
    };
    for seed in 0..episodes {
        let mut sessions = Vec::new();
        let mut actions = Vec::new();
        let s = d
            .run_episode(seed, channel, &mut |e| match e {
                DeployEvent::Session(r) => sessions.push(r.clone()),
                DeployEvent::Step { actions: a, .. } => actions.push(a.iter().map(|x| x.index()).collect()),
                DeployEvent::EpisodeEnd(_) => {}
            })
            .unwrap();
        run.stats.push(s);
        run.sessions.extend(sessions);
        run.actions.extend(actions);
    }
    run
}

fn serve_config(timeout_ms: u64) -> ServeConfig {
    ServeConfig {
        assist_timeout: Duration::from_millis(timeout_ms),
        ..ServeConfig::default()
    }
}

struct Client {
    ws: WebSocket<MaybeTlsStream<TcpStream>>,
}

impl Client {
    fn connect(addr: SocketAddr) -> Self {
        let (ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
        if let MaybeTlsStream::Plain(s) = ws.get_ref() {
            s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
        }
        Self { ws }
    }

    fn recv_text(&mut self) -> Option<String> {
        loop {
            match self.ws.read() {
                Ok(Message::Text(t)) => return Some(t.to_string()),
                Ok(Message::Close(_)) => return None,
                Ok(_) => continue,
                Err(_) => return None,
            }
        }
    }

    fn recv(&mut self) -> Option<ServerMessage> {
        self.recv_text().map(|t| {
            assert!(t.ends_with('\n'), "frames end with a newline");
            decode_server(&t).unwrap()
        })
    }

    fn send(&mut self, value: serde_json::Value) {
        self.ws.send(Message::text(value.to_string())).unwrap();
    }

    fn until_request(&mut self) -> Option<(u64, String, f64)> {
        loop {
            match self.recv()? {
                ServerMessage::AssistRequest {
                    session,
                    state,
                    incumbent_score,
                    legal,
                    ..
                } => {
                    assert!(!legal.is_empty());
                    return Some((session, state.partition, incumbent_score));
                }
                ServerMessage::StateUpdate { .. } => {}
                other => panic!("unexpected {other:?}"),
            }
        }
    }
}

fn stop_actions(agents: &[usize]) -> serde_json::Value {
    agents
        .iter()
        .map(|a| serde_json::json!({"agent": a, "action": "stop"}))
        .collect()
}

fn alive_in(signature: &str) -> Vec<usize> {
    GroupPartition::parse_signature(signature).unwrap().agents()
}

#[test]
fn health_rounds_half_up_to_one_decimal() {
    assert_eq!(health_pct(37, 45), 82.2);
    assert_eq!(health_pct(1, 16), 6.3);
    assert_eq!(health_pct(1, 8), 12.5);
    assert_eq!(health_pct(45, 45), 100.0);
    assert_eq!(health_pct(0, 45), 0.0);
}

#[test]
fn snapshot_lists_every_unit() {
    let (mut state, _) = reset(&scenario(), 0).unwrap();
    state.allies[1].health = 37;
    state.allies[2].health = 0;
    state.allies[2].alive = false;
    let p = GroupPartition::new(vec![vec![0, 1], vec![2]]).unwrap();
    let report = VarianceReport {
        intra: 1.0,
        inter: 0.5,
        combined: 0.25,
        alpha: 0.5,
        beta: 0.5,
    };
    let payload = snapshot_payload(3, &state, &p, &report);
    assert_eq!(payload.units.len(), 5);
    assert_eq!(payload.partition, "[0 1] [2]");
    assert_eq!(payload.units[1].health_pct, 82.2);
    assert_eq!((payload.units[2].health_pct, payload.units[2].alive), (0.0, false));
    assert_eq!(payload.variance.combined, 0.25);

    let msg = ServerMessage::StateUpdate {
        session: None,
        state: payload,
    };
    let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
    for key in ["kind", "session", "units", "partition", "variance"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["kind"], "state_update");
    let unit = &v["units"][1];
    for key in ["id", "team", "x", "y", "health_pct", "alive"] {
        assert!(unit.get(key).is_some(), "unit missing {key}");
    }
}

#[test]
fn verdict_uses_wire_field_names() {
    let msg = ServerMessage::Verdict {
        session: 4,
        verdict: VerdictKind::Accept,
        proposal_score: 1.5,
        incumbent_score: 1.0,
    };
    let v: serde_json::Value = serde_json::to_value(&msg).unwrap();
    assert_eq!(
        v,
        serde_json::json!({"kind": "verdict", "session": 4, "verdict": "accept", "proposal_score": 1.5, "incumbent_score": 1.0})
    );
}

#[test]
fn client_messages_reject_unknown_fields() {
    use harp_service::protocol::decode_client;
    let ok = decode_client(r#"{"kind":"proposal","session":1,"groups":[[0,1]],"actions":[{"agent":0,"action":"attack","target":1}]}"#);
    assert!(ok.is_ok());
    assert!(decode_client(r#"{"kind":"abandon","session":1,"extra":true}"#).is_err());
    assert!(decode_client(r#"{"kind":"cheer"}"#).is_err());
}

#[test]
fn operator_session_lifecycle() {
    let server = Server::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let mut channel = server.channel(serve_config(400));
    let deployment = thread::spawn(move || {
        assert!(channel.wait_for_operator(Duration::from_secs(10)));
        let run = deploy(&mut channel, 4, 5);
        channel.shutdown();
        run
    });

    let mut client = Client::connect(addr);
    let mut sessions_seen = 0;
    let mut accepted_seen = false;
    let mut abandoned_seen = false;
    let mut timeout_seen = false;

    while let Some((session, incumbent, incumbent_score)) = client.until_request() {
        sessions_seen += 1;
        let alive = alive_in(&incumbent);

        // A stale session id is refused without touching the open session.
        client.send(serde_json::json!({"kind": "abandon", "session": session + 1000}));
        match client.recv().unwrap() {
            ServerMessage::Error { reason, .. } => assert_eq!(reason, "no open session"),
            other => panic!("expected error, got {other:?}"),
        }
        client.send(serde_json::json!({"kind": "proposal", "session": session}));
        assert!(matches!(client.recv().unwrap(), ServerMessage::Error { .. }));

        if !accepted_seen {
            // The incumbent ties itself and is rejected with both scores.
            let groups = GroupPartition::parse_signature(&incumbent).unwrap().groups().to_vec();
            client.send(serde_json::json!({"kind": "proposal", "session": session, "groups": groups, "actions": stop_actions(&alive)}));
            match client.recv().unwrap() {
                ServerMessage::Verdict {
                    verdict,
                    proposal_score,
                    incumbent_score: inc,
                    ..
                } => {
                    assert_eq!(verdict, VerdictKind::Reject);
                    assert_eq!(proposal_score, inc);
                    assert_eq!(inc, incumbent_score);
                }
                other => panic!("expected verdict, got {other:?}"),
            }
            let candidates: Vec<Vec<Vec<usize>>> = vec![
                alive.iter().map(|&a| vec![a]).collect(),
                vec![alive.clone()],
                vec![alive[..1].to_vec(), alive[1..].to_vec()],
            ];
            let mut closed = None;
            for groups in candidates {
                if groups.iter().any(Vec::is_empty) {
                    continue;
                }
                client.send(serde_json::json!({"kind": "proposal", "session": session, "groups": groups, "actions": stop_actions(&alive)}));
                match client.recv().unwrap() {
                    ServerMessage::Verdict {
                        verdict: VerdictKind::Accept,
                        proposal_score,
                        incumbent_score,
                        ..
                    } => {
                        assert!(proposal_score > incumbent_score);
                        match client.recv().unwrap() {
                            ServerMessage::SessionClosed { session: s, outcome } => {
                                assert_eq!((s, outcome), (session, CloseOutcome::Accepted));
                            }
                            other => panic!("expected session_closed, got {other:?}"),
                        }
                        assert!(matches!(client.recv().unwrap(), ServerMessage::StateUpdate { .. }));
                        closed = Some(CloseOutcome::Accepted);
                        accepted_seen = true;
                        break;
                    }
                    ServerMessage::Verdict { .. } => {}
                    ServerMessage::SessionClosed { outcome, .. } => {
                        closed = Some(outcome);
                        break;
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            if closed.is_none() {
                client.send(serde_json::json!({"kind": "abandon", "session": session}));
                assert!(matches!(
                    client.recv().unwrap(),
                    ServerMessage::SessionClosed {
                        outcome: CloseOutcome::Abandoned,
                        ..
                    }
                ));
            }
        } else if !abandoned_seen {
            client.send(serde_json::json!({"kind": "abandon", "session": session}));
            match client.recv().unwrap() {
                ServerMessage::SessionClosed { outcome, .. } => assert_eq!(outcome, CloseOutcome::Abandoned),
                other => panic!("expected session_closed, got {other:?}"),
            }
            abandoned_seen = true;
        } else if !timeout_seen {
            // Say nothing: the session must time out and the game resume.
            match client.recv().unwrap() {
                ServerMessage::SessionClosed { session: s, outcome } => {
                    assert_eq!((s, outcome), (session, CloseOutcome::Timeout));
                }
                other => panic!("expected timeout, got {other:?}"),
            }
            timeout_seen = true;
        } else {
            client.send(serde_json::json!({"kind": "abandon", "session": session}));
            assert!(matches!(client.recv().unwrap(), ServerMessage::SessionClosed { .. }));
        }
    }
    let run = deployment.join().unwrap();
    assert!(accepted_seen, "no proposal was ever accepted");
    assert!(abandoned_seen && timeout_seen);
    assert_eq!(sessions_seen, run.sessions.len());
    let accepted = run.sessions.iter().filter(|s| s.status == SessionStatus::Accepted).count();
    assert_eq!(accepted as u64, run.stats.iter().map(|s| s.accepted).sum::<u64>());
    assert!(run.sessions.iter().any(|s| s.note.as_deref() == Some("assist timeout")));
}

#[test]
fn second_operator_is_turned_away() {
    let server = Server::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let mut channel = server.channel(serve_config(100));
    let _first = Client::connect(addr);
    assert!(channel.wait_for_operator(Duration::from_secs(10)));
    let mut second = Client::connect(addr);
    match second.recv() {
        Some(ServerMessage::Error { reason, session }) => {
            assert_eq!(reason, "operator slot taken");
            assert_eq!(session, None);
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    assert!(second.recv().is_none(), "rejected connection is closed");
}

#[test]
fn without_an_operator_sessions_time_out_to_greedy() {
    let server = Server::bind("127.0.0.1:0").unwrap();
    let mut channel = server.channel(serve_config(30));
    let served = deploy(&mut channel, 3, 8);
    let greedy = deploy(&mut AbandonChannel, 3, 8);
    assert_eq!(served.actions, greedy.actions);
    assert_eq!(served.stats, greedy.stats);
    assert!(!served.sessions.is_empty());
    assert!(served
        .sessions
        .iter()
        .all(|s| s.status == SessionStatus::Abandoned && s.note.as_deref() == Some("assist timeout")));
}

#[test]
fn disconnect_mid_session_falls_back_and_frees_the_slot() {
    let server = Server::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let mut channel = server.channel(serve_config(300));
    let deployment = thread::spawn(move || {
        assert!(channel.wait_for_operator(Duration::from_secs(10)));
        deploy(&mut channel, 2, 8)
    });
    let mut client = Client::connect(addr);
    client.until_request().expect("a session opens");
    drop(client);
    let run = deployment.join().unwrap();
    assert_eq!(run.sessions[0].status, SessionStatus::Abandoned);
    assert_eq!(run.sessions[0].note.as_deref(), Some("channel disconnected"));
    // Later sessions found no operator and timed out.
    assert!(run.sessions[1..]
        .iter()
        .all(|s| s.note.as_deref() == Some("assist timeout")));
}
