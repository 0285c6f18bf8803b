#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use comerge::experiments::ConditionGrid;
use comerge::model::Action;
use comerge::planner::PlannerConfig;
use comerge_service::protocol::ServerMessage;
use comerge_service::server;
use comerge_service::session::SessionPlan;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// One short 100 m trial at alpha 0.6 with an expansion-capped planner,
/// so runs do not depend on machine speed.
pub fn quick_plan(seed: u64, tick_ms: u64) -> SessionPlan {
    let mut planner = PlannerConfig::default();
    planner.max_expansions = Some(2000);
    let grid = ConditionGrid { road_lengths: vec![100.0], alphas: vec![0.6], planner, ..ConditionGrid::default() };
    SessionPlan {
        practice_trials: 0,
        recorded_trials: 1,
        seed,
        grid,
        tick_period: Duration::from_millis(tick_ms),
        planning_guard: Duration::from_millis(10),
        questionnaire_timeout: Duration::from_secs(2),
    }
}

pub async fn start(plan: SessionPlan, out: &Path) -> SocketAddr {
    let (addr, _task) = server::spawn("127.0.0.1:0", plan, out.to_path_buf()).await.unwrap();
    addr
}

pub async fn connect(addr: SocketAddr) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}")).await.unwrap().0
}

/// Next server message, or `None` once the socket closes.
pub async fn recv(ws: &mut Ws) -> Option<ServerMessage> {
    loop {
        let frame = tokio::time::timeout(Duration::from_secs(30), ws.next()).await.expect("server went quiet")?;
        match frame {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(t.as_str()).expect("server sent a valid message")),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => {}
        }
    }
}

pub async fn send_text(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text.to_owned())).await.unwrap();
}

pub async fn send_action(ws: &mut Ws, action: Action) {
    let text = serde_json::json!({ "kind": "action", "action": action }).to_string();
    send_text(ws, &text).await;
}

/// Drives a whole session. `script(k)` is sent as the action for tick `k`
/// right after the message preceding that tick arrives.
pub async fn drive(ws: &mut Ws, script: impl Fn(u64) -> Option<Action>, answer: Option<(i8, i8)>) -> Vec<(Instant, ServerMessage)> {
    let mut seen = Vec::new();
    while let Some(msg) = recv(ws).await {
        let next_tick = match &msg {
            ServerMessage::TrialStart { .. } => Some(0),
            ServerMessage::Tick { tick, .. } => Some(tick + 1),
            _ => None,
        };
        if let Some(a) = next_tick.and_then(&script) {
            send_action(ws, a).await;
        }
        if let (ServerMessage::TrialEnd { .. }, Some((q1, q2))) = (&msg, answer) {
            send_text(ws, &serde_json::json!({ "kind": "questionnaire", "q1": q1, "q2": q2 }).to_string()).await;
        }
        let done = matches!(msg, ServerMessage::Bye {});
        seen.push((Instant::now(), msg));
        if done {
            break;
        }
    }
    seen
}

pub fn session_id(seen: &[(Instant, ServerMessage)]) -> String {
    match &seen[0].1 {
        ServerMessage::Hello { session_id, .. } => session_id.clone(),
        other => panic!("first message was {other:?}"),
    }
}
