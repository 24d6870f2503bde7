mod common;

use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::Duration;

use harp_service::protocol::decode_server;
use harp_service::ServerMessage;
use serde_json::json;
use tungstenite::Message;

const HARP: &str = env!("CARGO_BIN_EXE_harp");

#[test]
fn config_errors_exit_with_code_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "scenario = \"8v8\"\n[train]\nstepz = 10\n").unwrap();
    let out = Command::new(HARP)
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stepz"), "{err}");
}

#[test]
fn train_then_evaluate_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "scenario = \"5v6\"\nseeds = [0]\n[train]\nsteps = 0\neval_episodes = 1\n").unwrap();
    let status = Command::new(HARP)
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(HARP)
        .args(["evaluate", "--mode", "greedy", "--repeats", "1", "--episodes-per-eval", "2", "--checkpoint"])
        .arg(dir.path().join("seed-0.harp"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("win rate (%)") && table.contains("greedy"), "{table}");

    let out = Command::new(HARP)
        .args(["evaluate", "--scenario", "8v8", "--checkpoint"])
        .arg(dir.path().join("seed-0.harp"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint error"));
}

/// Plays operator against `harp deploy`: rejects the first request with the
/// incumbent itself, abandons, and lets later sessions time out. The
/// resulting replay log must verify.
#[test]
fn deploy_serves_an_operator_and_logs_a_replayable_run() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = common::write_checkpoint(dir.path(), "5v6", 1);
    let log = dir.path().join("live.ndjson");
    let mut child = Command::new(HARP)
        .args(["deploy", "--bind", "127.0.0.1:0", "--scenario", "5v6", "--assist-timeout-s", "0.3"])
        .args(["--episodes", "2", "--checkpoint"])
        .arg(&ckpt)
        .arg("--replay-log")
        .arg(&log)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdout = BufReader::new(child.stdout.take().unwrap());
    let mut first = String::new();
    stdout.read_line(&mut first).unwrap();
    let addr = first.trim().strip_prefix("listening on ").expect("address line").to_string();

    let (mut ws, _) = tungstenite::connect(addr.as_str()).unwrap();
    if let tungstenite::stream::MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    }
    let mut states = 0;
    let mut verdicts = 0;
    let mut closed = Vec::new();
    let mut answered = false;
    loop {
        let msg = match ws.read() {
            Ok(Message::Text(t)) => decode_server(&t).unwrap(),
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        match msg {
            ServerMessage::StateUpdate { .. } => states += 1,
            ServerMessage::AssistRequest { session, state, legal, .. } if !answered => {
                answered = true;
                let groups: Vec<Vec<usize>> = state
                    .partition
                    .split("] [")
                    .map(|g| {
                        g.trim_matches(['[', ']'])
                            .split(' ')
                            .map(|a| a.parse().unwrap())
                            .collect()
                    })
                    .collect();
                let actions: Vec<_> = legal.iter().map(|l| &l.actions[0]).collect();
                let proposal = json!({"kind": "proposal", "session": session, "groups": groups, "actions": actions});
                ws.send(Message::text(proposal.to_string())).unwrap();
            }
            ServerMessage::AssistRequest { .. } => {}
            ServerMessage::Verdict { session, proposal_score, incumbent_score, .. } => {
                verdicts += 1;
                assert_eq!(proposal_score, incumbent_score);
                let abandon = json!({"kind": "abandon", "session": session});
                ws.send(Message::text(abandon.to_string())).unwrap();
            }
            ServerMessage::SessionClosed { outcome, .. } => closed.push(outcome),
            ServerMessage::Error { reason, .. } => panic!("unexpected error {reason}"),
        }
    }
    let status = child.wait().unwrap();
    assert!(status.success());
    assert!(states > 2);
    assert_eq!(verdicts, 1);
    assert_eq!(closed.first(), Some(&harp_service::CloseOutcome::Abandoned));
    assert!(closed[1..].iter().all(|c| *c == harp_service::CloseOutcome::Timeout), "{closed:?}");

    let out = Command::new(HARP).arg("replay").arg(&log).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(text.contains("verified: 2 episodes"), "{text}");
    assert!(text.contains("(assist timeout)") || closed.len() == 1, "{text}");
}
