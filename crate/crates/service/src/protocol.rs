//! JSON messages exchanged over the web socket, one object per text frame.

use comerge::model::{Action, CarState, Side, WorldState};
use comerge::sim::TrialOutcome;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Colors {
    pub human: String,
    pub robot: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarView {
    pub side: Side,
    pub x: f64,
    pub y: f64,
    pub v: f64,
}

impl CarView {
    pub fn new(side: Side, car: &CarState) -> Self {
        Self { side, x: car.x, y: car.y, v: car.v }
    }

    pub fn pair(s: &WorldState) -> Vec<CarView> {
        vec![CarView::new(Side::Human, &s.human), CarView::new(Side::Robot, &s.robot)]
    }
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Hello {
        protocol_version: String,
        session_id: String,
    },
    TrialStart {
        trial_index: usize,
        practice: bool,
        road_length: f64,
        human_start_lane: u8,
        human_goal_lane: u8,
        av_indicator_lane: u8,
        colors: Colors,
    },
    Tick {
        tick: u64,
        time_s: f64,
        cars: Vec<CarView>,
        distance_remaining_m: f64,
        av_indicator_lane: u8,
    },
    TrialEnd {
        trial_index: usize,
        outcome: TrialOutcome,
    },
    Bye {},
    /// Reply to a client message that was rejected.
    Error {
        message: String,
    },
}

/// Client to server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Action {
        #[serde(default)]
        tick_hint: Option<u64>,
        action: Action,
    },
    Questionnaire {
        q1: i8,
        q2: i8,
    },
}

const SERVER_KINDS: [&str; 5] = ["hello", "trial_start", "tick", "trial_end", "bye"];

/// Parses a client frame, producing the text of the protocol error otherwise.
pub fn parse_client(text: &str) -> Result<ClientMessage, String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed json: {e}"))?;
    let kind = value.get("kind").and_then(|k| k.as_str()).ok_or("missing string field \"kind\"")?.to_owned();
    if SERVER_KINDS.contains(&kind.as_str()) {
        return Err(format!("kind {kind:?} is only sent by the server"));
    }
    if kind != "action" && kind != "questionnaire" {
        return Err(format!("unknown kind {kind:?}"));
    }
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| format!("invalid {kind}: {e}"))?;
    if let ClientMessage::Questionnaire { q1, q2 } = msg {
        if ![q1, q2].iter().all(|q| (-1..=1).contains(q)) {
            return Err("questionnaire answers must be -1, 0 or 1".into());
        }
    }
    Ok(msg)
}

/// Distance from the human car's front bumper to the road end, never negative.
pub fn distance_remaining(s: &WorldState, road_length: f64, car_length: f64) -> f64 {
    (road_length - s.human.y - car_length / 2.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages() {
        assert_eq!(
            parse_client(r#"{"kind":"action","tick_hint":3,"action":"turn_right"}"#).unwrap(),
            ClientMessage::Action { tick_hint: Some(3), action: Action::TurnRight }
        );
        assert_eq!(
            parse_client(r#"{"kind":"action","action":"stay"}"#).unwrap(),
            ClientMessage::Action { tick_hint: None, action: Action::Stay }
        );
        assert_eq!(
            parse_client(r#"{"kind":"questionnaire","q1":1,"q2":0}"#).unwrap(),
            ClientMessage::Questionnaire { q1: 1, q2: 0 }
        );
    }

    #[test]
    fn rejected_client_messages() {
        for bad in [
            "not json",
            r#"{"action":"stay"}"#,
            r#"{"kind":"honk"}"#,
            r#"{"kind":"tick","tick":1}"#,
            r#"{"kind":"action","action":"fly"}"#,
            r#"{"kind":"action","action":"stay","extra":1}"#,
            r#"{"kind":"questionnaire","q1":2,"q2":0}"#,
        ] {
            assert!(parse_client(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn server_messages_are_tagged() {
        let hello = ServerMessage::Hello { protocol_version: "1".into(), session_id: "s".into() };
        assert_eq!(serde_json::to_string(&hello).unwrap(), r#"{"kind":"hello","protocol_version":"1","session_id":"s"}"#);
        assert_eq!(serde_json::to_string(&ServerMessage::Bye {}).unwrap(), r#"{"kind":"bye"}"#);
        let tick = ServerMessage::Tick {
            tick: 0,
            time_s: 0.2,
            cars: CarView::pair(&WorldState::new(CarState::new(3.0, 2.0, 15.0), CarState::new(3.0, 6.0, 15.0))),
            distance_remaining_m: 194.5,
            av_indicator_lane: 0,
        };
        let text = serde_json::to_string(&tick).unwrap();
        assert!(text.contains(r#""side":"human""#));
        assert_eq!(serde_json::from_str::<ServerMessage>(&text).unwrap(), tick);
    }

    #[test]
    fn distance_is_clamped() {
        let s = WorldState::new(CarState::new(190.0, 2.0, 15.0), CarState::new(0.0, 6.0, 15.0));
        assert_eq!(distance_remaining(&s, 200.0, 5.0), 7.5);
        let s = WorldState::new(CarState::new(199.0, 2.0, 15.0), CarState::new(0.0, 6.0, 15.0));
        assert_eq!(distance_remaining(&s, 200.0, 5.0), 0.0);
    }
}
