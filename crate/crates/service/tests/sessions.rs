mod common;

use std::path::Path;
use std::time::Duration;

use comerge::model::{self, Action};
use comerge::sim::{self, ScriptedPolicy, TrialLog};
use comerge_service::commands;
use comerge_service::protocol::ServerMessage;
use comerge_service::session::trial_log_path;
use common::*;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_trial.jsonl");

fn golden_script() -> Vec<Action> {
    use Action::*;
    let mut script = vec![Accelerate; 8];
    script.extend([TurnLeft; 5]);
    script.extend([Stay, Decelerate, Decelerate]);
    script
}

fn only_log(dir: &Path, session_id: &str) -> TrialLog {
    TrialLog::load(&trial_log_path(&dir.join(session_id), 0)).unwrap()
}

fn kinds(seen: &[(std::time::Instant, ServerMessage)]) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for (_, m) in seen {
        let k = match m {
            ServerMessage::Hello { .. } => "hello",
            ServerMessage::TrialStart { .. } => "trial_start",
            ServerMessage::Tick { .. } => "tick",
            ServerMessage::TrialEnd { .. } => "trial_end",
            ServerMessage::Bye {} => "bye",
            ServerMessage::Error { .. } => "error",
        };
        if out.last() != Some(&k) {
            out.push(k);
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn silent_client_drives_straight() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick_plan(11, 100), dir.path()).await;
    let mut ws = connect(addr).await;
    let seen = drive(&mut ws, |_| None, Some((1, -1))).await;
    assert_eq!(kinds(&seen), ["hello", "trial_start", "tick", "trial_end", "bye"]);

    let id = session_id(&seen);
    let log = only_log(dir.path(), &id);
    assert!(log.aborted.is_none());
    let h0 = log.header.initial_state().human;
    for r in &log.records {
        assert_eq!(r.human_action, Action::Stay);
        assert_eq!((r.human.x, r.human.v), (h0.x, h0.v));
    }
    commands::replay_check(&log).unwrap();

    let ticks: Vec<u64> = seen.iter().filter_map(|(_, m)| match m { ServerMessage::Tick { tick, .. } => Some(*tick), _ => None }).collect();
    assert_eq!(ticks, (0..log.records.len() as u64).collect::<Vec<_>>());

    let answers = std::fs::read_to_string(dir.path().join(&id).join("questionnaire.jsonl")).unwrap();
    assert_eq!(answers, "{\"trial_index\":0,\"q1\":1,\"q2\":-1}\n");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn golden_session_log() {
    let dir = tempfile::tempdir().unwrap();
    let plan = quick_plan(5, 100);
    let spec = plan.trials(plan.seed).remove(0);
    let addr = start(plan, dir.path()).await;
    let mut ws = connect(addr).await;
    let script = golden_script();
    let seen = drive(&mut ws, |k| script.get(k as usize).copied(), None).await;
    let text = std::fs::read_to_string(trial_log_path(&dir.path().join(session_id(&seen)), 0)).unwrap();

    // The same actions fed offline give the same bytes.
    let (_, offline) = sim::run_trial(&spec.config, &mut ScriptedPolicy::new(golden_script()), &mut sim::robot_policy(&spec.config)).unwrap();
    assert_eq!(offline.to_jsonl(), text);

    if std::env::var_os("COMERGE_BLESS").is_some() {
        std::fs::write(GOLDEN, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(GOLDEN).unwrap(), "set COMERGE_BLESS=1 to re-record");
    commands::replay_check(&TrialLog::read_jsonl(text.as_bytes()).unwrap()).unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick_plan(3, 100), dir.path()).await;
    let (mut a, mut b) = (connect(addr).await, connect(addr).await);
    let (seen_a, seen_b) = tokio::join!(
        drive(&mut a, |_| Some(Action::Accelerate), None),
        drive(&mut b, |_| Some(Action::Decelerate), None),
    );
    let (id_a, id_b) = (session_id(&seen_a), session_id(&seen_b));
    assert_ne!(id_a, id_b);
    for (id, want) in [(id_a, Action::Accelerate), (id_b, Action::Decelerate)] {
        let log = only_log(dir.path(), &id);
        assert!(log.records.iter().all(|r| r.human_action == want), "{id}");
        commands::replay_check(&log).unwrap();
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn turn_right_at_the_edge_is_logged_as_stay() {
    let dir = tempfile::tempdir().unwrap();
    let seed = (0..).find(|&s| quick_plan(s, 100).trials(s)[0].config.start_lane_human == 1).unwrap();
    let addr = start(quick_plan(seed, 100), dir.path()).await;
    let mut ws = connect(addr).await;
    let seen = drive(&mut ws, |_| Some(Action::TurnRight), None).await;
    let log = only_log(dir.path(), &session_id(&seen));
    let world = log.header.world();
    let states = log.states();
    let mut at_edge = 0;
    for (pre, r) in states.iter().zip(&log.records) {
        if model::sanitize(&pre.human, Action::TurnRight, &world) == Action::Stay {
            at_edge += 1;
            assert_eq!(r.human_action, Action::Stay);
        } else {
            assert_eq!(r.human_action, Action::TurnRight);
        }
    }
    assert!(at_edge > 0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn every_bad_message_gets_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick_plan(2, 100), dir.path()).await;
    let mut ws = connect(addr).await;
    assert!(matches!(recv(&mut ws).await, Some(ServerMessage::Hello { .. })));
    let bad = [
        "not json",
        r#"{"kind":"tick","tick":0}"#,
        r#"{"kind":"honk"}"#,
        r#"{"kind":"action","action":"fly"}"#,
        r#"{"kind":"questionnaire","q1":0,"q2":0}"#,
    ];
    for b in bad {
        send_text(&mut ws, b).await;
    }
    use futures_util::SinkExt;
    ws.send(tokio_tungstenite::tungstenite::Message::binary(vec![1u8, 2])).await.unwrap();
    let mut errors = Vec::new();
    while errors.len() < bad.len() + 1 {
        match recv(&mut ws).await.expect("socket stayed open") {
            ServerMessage::Error { message } => errors.push(message),
            _ => {}
        }
    }
    assert!(errors[0].starts_with("malformed json"));
    assert!(errors[1].contains("only sent by the server"));
    assert!(errors[2].contains("unknown kind"));
    assert!(errors[4].contains("no questionnaire"));
    // The session carries on normally.
    let rest = drive(&mut ws, |_| None, None).await;
    assert!(matches!(rest.last().unwrap().1, ServerMessage::Bye {}));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn disconnect_aborts_the_trial() {
    let dir = tempfile::tempdir().unwrap();
    let addr = start(quick_plan(4, 100), dir.path()).await;
    let mut ws = connect(addr).await;
    let mut id = String::new();
    let mut ticks = 0;
    while ticks < 3 {
        match recv(&mut ws).await.unwrap() {
            ServerMessage::Hello { session_id, .. } => id = session_id,
            ServerMessage::Tick { .. } => ticks += 1,
            _ => {}
        }
    }
    drop(ws);
    let path = trial_log_path(&dir.path().join(&id), 0);
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    while !path.exists() {
        assert!(std::time::Instant::now() < deadline, "no log written");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    tokio::time::sleep(Duration::from_millis(100)).await;
    let log = TrialLog::load(&path).unwrap();
    assert_eq!(log.aborted.as_deref(), Some("client disconnected"));
    assert!(sim::compute_outcome(&log).aborted);
    assert!(log.records.len() >= 3 && log.records.len() < 10);
    commands::replay_check(&log).unwrap();
}
