//! Deterministic two-car, two-lane world model.
//!
//! Longitudinal position `y` grows along the road, lateral position `x`
//! grows to the right starting at the left road edge. Lane 0 is the left
//! lane. Every function here is pure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Centering weight in the goal-lane reward.
pub const CENTERING_WEIGHT: f64 = 0.3;
/// Reward of any state in which the two cars overlap.
pub const COLLISION_REWARD: f64 = -10.0;
/// Largest instantaneous reward an agent can receive.
pub const MAX_REWARD: f64 = 1.0;

const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("action {action:?} is not allowed at x = {x}")]
    ActionNotAllowed { action: Action, x: f64 },
    #[error("lateral position {0} is outside the road")]
    OffRoad(f64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsParams {
    pub dt: f64,
    pub accel: f64,
    pub v_lat: f64,
    pub v_max: f64,
    pub v_min: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self { dt: 0.2, accel: 2.0, v_lat: 3.0, v_max: 30.0, v_min: 0.0 }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.dt > 0.0
            && self.accel > 0.0
            && self.v_lat >= 0.0
            && self.v_lat <= self.v_max
            && self.v_min >= 0.0
            && self.v_min <= self.v_max;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParam(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadConfig {
    pub lane_width: f64,
    pub num_lanes: u8,
    pub road_length: f64,
    pub goal_lane_robot: u8,
    pub goal_lane_human: u8,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self { lane_width: 4.0, num_lanes: 2, road_length: 200.0, goal_lane_robot: 1, goal_lane_human: 0 }
    }
}

impl RoadConfig {
    pub fn width(&self) -> f64 {
        self.lane_width * f64::from(self.num_lanes)
    }

    pub fn lane_center(&self, lane: u8) -> f64 {
        (f64::from(lane) + 0.5) * self.lane_width
    }

    pub fn goal_lane(&self, side: Side) -> u8 {
        match side {
            Side::Human => self.goal_lane_human,
            Side::Robot => self.goal_lane_robot,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.lane_width > 0.0
            && self.num_lanes == 2
            && self.road_length > 0.0
            && self.goal_lane_robot < 2
            && self.goal_lane_human < 2;
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParam(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarGeometry {
    pub length: f64,
    pub width: f64,
}

impl Default for CarGeometry {
    fn default() -> Self {
        Self { length: 5.0, width: 2.0 }
    }
}

/// Everything the dynamics, collision check and reward depend on.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct World {
    pub physics: PhysicsParams,
    pub road: RoadConfig,
    pub geometry: CarGeometry,
}

impl World {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.physics.validate()?;
        self.road.validate()?;
        let g = &self.geometry;
        if !(g.length > 0.0 && g.width > 0.0 && g.width <= self.road.lane_width) {
            return Err(ModelError::InvalidParam(format!("{g:?}")));
        }
        Ok(())
    }

    /// Lateral range the car center may occupy with the body on the road.
    pub fn center_bounds(&self) -> (f64, f64) {
        let half = self.geometry.width / 2.0;
        (half, self.road.width() - half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub y: f64,
    pub x: f64,
    pub v: f64,
}

impl CarState {
    pub fn new(y: f64, x: f64, v: f64) -> Self {
        Self { y, x, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub human: CarState,
    pub robot: CarState,
    pub step: u64,
}

impl WorldState {
    pub fn new(human: CarState, robot: CarState) -> Self {
        Self { human, robot, step: 0 }
    }

    pub fn car(&self, side: Side) -> &CarState {
        match side {
            Side::Human => &self.human,
            Side::Robot => &self.robot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Human,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accelerate,
    Decelerate,
    Stay,
    TurnRight,
    TurnLeft,
}

impl Action {
    pub const ALL: [Action; 5] =
        [Action::Accelerate, Action::Decelerate, Action::Stay, Action::TurnRight, Action::TurnLeft];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Accelerate => "accelerate",
            Action::Decelerate => "decelerate",
            Action::Stay => "stay",
            Action::TurnRight => "turn_right",
            Action::TurnLeft => "turn_left",
        }
    }

    pub fn is_turn(self) -> bool {
        matches!(self, Action::TurnRight | Action::TurnLeft)
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown action {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub human: Action,
    pub robot: Action,
}

impl JointAction {
    pub fn new(human: Action, robot: Action) -> Self {
        Self { human, robot }
    }

    /// All 25 joint actions, human-major.
    pub fn all() -> impl Iterator<Item = JointAction> {
        Action::ALL
            .into_iter()
            .flat_map(|h| Action::ALL.into_iter().map(move |r| JointAction::new(h, r)))
    }

    pub fn index(self) -> usize {
        self.human.index() * 5 + self.robot.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    pub lane: u8,
    pub sublane: f64,
}

/// Lateral and longitudinal speed of a car turning at speed `v`.
#[inline]
pub fn turn_velocity(v: f64, physics: &PhysicsParams) -> (f64, f64) {
    let vx = v.min(physics.v_lat);
    let vy = (v * v - vx * vx).max(0.0).sqrt();
    (vx, vy)
}

/// Whether `action` keeps the car body on the road for one step.
#[inline]
pub fn is_allowed(car: &CarState, action: Action, world: &World) -> bool {
    let half = world.geometry.width / 2.0;
    let (vx, _) = turn_velocity(car.v, &world.physics);
    let shift = vx * world.physics.dt;
    match action {
        Action::TurnRight => car.x + half + shift <= world.road.width() + EDGE_EPS,
        Action::TurnLeft => car.x - half - shift >= -EDGE_EPS,
        _ => true,
    }
}

/// The actions available to a car; speed changes are always allowed.
pub fn allowed_actions(car: &CarState, world: &World) -> Vec<Action> {
    Action::ALL.into_iter().filter(|a| is_allowed(car, *a, world)).collect()
}

/// Replaces a disallowed action with `Stay`.
#[inline]
pub fn sanitize(car: &CarState, action: Action, world: &World) -> Action {
    if is_allowed(car, action, world) {
        action
    } else {
        Action::Stay
    }
}

/// Advances one car without checking the edge rule.
#[inline]
pub(crate) fn advance_car(car: &CarState, action: Action, world: &World) -> CarState {
    let p = &world.physics;
    match action {
        Action::Accelerate | Action::Decelerate | Action::Stay => {
            let dv = match action {
                Action::Accelerate => p.accel * p.dt,
                Action::Decelerate => -p.accel * p.dt,
                _ => 0.0,
            };
            CarState { y: car.y + car.v * p.dt, x: car.x, v: (car.v + dv).clamp(p.v_min, p.v_max) }
        }
        Action::TurnRight | Action::TurnLeft => {
            let (vx, vy) = turn_velocity(car.v, p);
            let dir = if action == Action::TurnRight { 1.0 } else { -1.0 };
            let (lo, hi) = world.center_bounds();
            CarState { y: car.y + vy * p.dt, x: (car.x + dir * vx * p.dt).clamp(lo, hi), v: car.v }
        }
    }
}

pub fn step_car(car: &CarState, action: Action, world: &World) -> Result<CarState, ModelError> {
    if !is_allowed(car, action, world) {
        return Err(ModelError::ActionNotAllowed { action, x: car.x });
    }
    Ok(advance_car(car, action, world))
}

/// Steps both cars from the same pre-state.
pub fn transition(s: &WorldState, u: JointAction, world: &World) -> Result<WorldState, ModelError> {
    Ok(WorldState {
        human: step_car(&s.human, u.human, world)?,
        robot: step_car(&s.robot, u.robot, world)?,
        step: s.step + 1,
    })
}

/// Like [`transition`], but disallowed turns degrade to `Stay`.
#[inline]
pub fn sanitized_transition(s: &WorldState, u: JointAction, world: &World) -> WorldState {
    WorldState {
        human: advance_car(&s.human, sanitize(&s.human, u.human, world), world),
        robot: advance_car(&s.robot, sanitize(&s.robot, u.robot, world), world),
        step: s.step + 1,
    }
}

#[inline]
pub(crate) fn lane_position_unchecked(x: f64, road: &RoadConfig) -> LanePosition {
    let w = road.lane_width;
    let max_lane = road.num_lanes.saturating_sub(1);
    // Divider positions belong to the higher-index lane. The saturating cast
    // floors non-negative values.
    let lane = ((x / w).max(0.0) as u8).min(max_lane);
    let center = (f64::from(lane) + 0.5) * w;
    let sublane = ((x - center).abs() / (w / 2.0)).clamp(0.0, 1.0);
    LanePosition { lane, sublane }
}

pub fn lane_position(x: f64, road: &RoadConfig) -> Result<LanePosition, ModelError> {
    if !(0.0..=road.width()).contains(&x) {
        return Err(ModelError::OffRoad(x));
    }
    Ok(lane_position_unchecked(x, road))
}

/// Axis-aligned overlap test with positive area in both axes.
#[inline]
pub fn check_collision(s: &WorldState, g: &CarGeometry) -> bool {
    (s.human.x - s.robot.x).abs() < g.width && (s.human.y - s.robot.y).abs() < g.length
}

pub fn instantaneous_reward(s: &WorldState, side: Side, world: &World) -> f64 {
    if check_collision(s, &world.geometry) {
        return COLLISION_REWARD;
    }
    lane_reward(s.car(side).x, world.road.goal_lane(side), &world.road)
}

/// Goal-lane reward of a car at lateral position `x`, ignoring collisions.
#[inline]
pub(crate) fn lane_reward(x: f64, goal: u8, road: &RoadConfig) -> f64 {
    let pos = lane_position_unchecked(x, road);
    if pos.lane == goal {
        CENTERING_WEIGHT * (-pos.sublane).exp() + (1.0 - CENTERING_WEIGHT)
    } else {
        0.0
    }
}

/// Both agents' rewards, sharing one collision check.
#[inline]
pub fn rewards(s: &WorldState, world: &World) -> (f64, f64) {
    if check_collision(s, &world.geometry) {
        return (COLLISION_REWARD, COLLISION_REWARD);
    }
    let road = &world.road;
    (
        lane_reward(s.human.x, road.goal_lane_human, road),
        lane_reward(s.robot.x, road.goal_lane_robot, road),
    )
}

/// True once either front bumper is past the road end or the cars collide.
#[inline]
pub fn is_terminal(s: &WorldState, world: &World) -> bool {
    let front = world.geometry.length / 2.0;
    let end = world.road.road_length;
    s.human.y + front > end || s.robot.y + front > end || check_collision(s, &world.geometry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::default()
    }

    fn car(y: f64, x: f64, v: f64) -> CarState {
        CarState::new(y, x, v)
    }

    #[test]
    fn step_examples() {
        let w = world();
        let c = car(0.0, 2.0, 15.0);
        assert_eq!(step_car(&c, Action::Stay, &w).unwrap(), car(3.0, 2.0, 15.0));
        let acc = step_car(&c, Action::Accelerate, &w).unwrap();
        assert!((acc.y - 3.0).abs() < 1e-12 && (acc.v - 15.4).abs() < 1e-12 && acc.x == 2.0);
        let tr = step_car(&c, Action::TurnRight, &w).unwrap();
        assert!((tr.x - 2.6).abs() < 1e-12);
        assert!((tr.y - 0.2 * 216f64.sqrt()).abs() < 1e-12);
        assert!((tr.y - 2.9394).abs() < 1e-4);
        assert_eq!(tr.v, 15.0);
        let slow = step_car(&car(0.0, 2.0, 2.0), Action::TurnRight, &w).unwrap();
        assert!((slow.x - 2.4).abs() < 1e-12);
        assert_eq!(slow.y, 0.0);
        assert_eq!(slow.v, 2.0);
        let fast = step_car(&car(0.0, 2.0, 29.9), Action::Accelerate, &w).unwrap();
        assert_eq!(fast.v, 30.0);
    }

    #[test]
    fn decelerate_at_rest_is_noop_on_speed() {
        let c = step_car(&car(5.0, 2.0, 0.0), Action::Decelerate, &world()).unwrap();
        assert_eq!(c, car(5.0, 2.0, 0.0));
    }

    #[test]
    fn edge_rule() {
        let w = world();
        let right_edge = car(0.0, 8.0 - 1.0, 15.0);
        let acts = allowed_actions(&right_edge, &w);
        assert!(!acts.contains(&Action::TurnRight));
        assert_eq!(acts.len(), 4);
        assert_eq!(allowed_actions(&car(0.0, 2.0, 15.0), &w).len(), 5);
        let left_edge = car(0.0, 1.0, 15.0);
        assert!(!allowed_actions(&left_edge, &w).contains(&Action::TurnLeft));
        assert!(matches!(
            step_car(&right_edge, Action::TurnRight, &w),
            Err(ModelError::ActionNotAllowed { .. })
        ));
    }

    #[test]
    fn transition_examples() {
        let w = world();
        let s = WorldState::new(car(0.0, 6.0, 15.0), car(0.0, 2.0, 15.0));
        let n = transition(&s, JointAction::new(Action::Stay, Action::Stay), &w).unwrap();
        assert_eq!(n.human.y, 3.0);
        assert_eq!(n.robot.y, 3.0);
        assert_eq!(n.step, 1);
        assert_eq!(n, transition(&s, JointAction::new(Action::Stay, Action::Stay), &w).unwrap());
        let t = transition(&s, JointAction::new(Action::TurnLeft, Action::TurnRight), &w).unwrap();
        assert!((t.human.x - 5.4).abs() < 1e-12);
        assert!((t.robot.x - 2.6).abs() < 1e-12);
    }

    #[test]
    fn lane_position_examples() {
        let r = RoadConfig::default();
        let p = lane_position(2.0, &r).unwrap();
        assert_eq!((p.lane, p.sublane), (0, 0.0));
        let p = lane_position(4.0, &r).unwrap();
        assert_eq!((p.lane, p.sublane), (1, 1.0));
        let p = lane_position(6.0, &r).unwrap();
        assert_eq!((p.lane, p.sublane), (1, 0.0));
        let p = lane_position(8.0, &r).unwrap();
        assert_eq!((p.lane, p.sublane), (1, 1.0));
        assert!(lane_position(-0.1, &r).is_err());
        assert!(lane_position(8.1, &r).is_err());
    }

    #[test]
    fn collision_examples() {
        let g = CarGeometry::default();
        let same = WorldState::new(car(0.0, 2.0, 10.0), car(0.0, 2.0, 10.0));
        assert!(check_collision(&same, &g));
        let touching = WorldState::new(car(0.0, 2.0, 10.0), car(5.0, 2.0, 10.0));
        assert!(!check_collision(&touching, &g));
        let side = WorldState::new(car(0.0, 2.0, 10.0), car(0.0, 3.9, 10.0));
        assert!(check_collision(&side, &g));
        let apart = WorldState::new(car(0.0, 2.0, 10.0), car(0.0, 6.0, 10.0));
        assert!(!check_collision(&apart, &g));
    }

    #[test]
    fn reward_examples() {
        let w = world();
        // Robot goal lane 1, human goal lane 0.
        let crash = WorldState::new(car(0.0, 2.0, 10.0), car(1.0, 2.5, 10.0));
        assert_eq!(instantaneous_reward(&crash, Side::Robot, &w), -10.0);
        assert_eq!(instantaneous_reward(&crash, Side::Human, &w), -10.0);
        let centered = WorldState::new(car(0.0, 2.0, 10.0), car(0.0, 6.0, 10.0));
        assert_eq!(instantaneous_reward(&centered, Side::Robot, &w), 1.0);
        assert_eq!(instantaneous_reward(&centered, Side::Human, &w), 1.0);
        let boundary = WorldState::new(car(0.0, 2.0, 10.0), car(50.0, 4.0, 10.0));
        let r = instantaneous_reward(&boundary, Side::Robot, &w);
        assert!((r - (0.3 * (-1f64).exp() + 0.7)).abs() < 1e-12);
        assert!((r - 0.81036).abs() < 1e-5);
        let swapped = WorldState::new(car(0.0, 6.0, 10.0), car(0.0, 2.0, 10.0));
        assert_eq!(instantaneous_reward(&swapped, Side::Robot, &w), 0.0);
        assert_eq!(rewards(&swapped, &w), (0.0, 0.0));
    }

    #[test]
    fn terminal_examples() {
        let w = world();
        let end = WorldState::new(car(0.0, 2.0, 10.0), car(201.0, 6.0, 10.0));
        assert!(is_terminal(&end, &w));
        let crash = WorldState::new(car(0.0, 2.0, 10.0), car(0.0, 2.0, 10.0));
        assert!(is_terminal(&crash, &w));
        let mid = WorldState::new(car(100.0, 2.0, 10.0), car(100.0, 6.0, 10.0));
        assert!(!is_terminal(&mid, &w));
    }

    #[test]
    fn action_strings_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.as_str().parse::<Action>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.as_str()));
        }
        assert!("jump".parse::<Action>().is_err());
        assert_eq!(JointAction::all().count(), 25);
        for (i, u) in JointAction::all().enumerate() {
            assert_eq!(u.index(), i);
        }
    }

    #[test]
    fn world_json_uses_field_names() {
        let w: World = serde_json::from_str(r#"{"physics": {"accel": 1.5}, "road": {"road_length": 100}}"#).unwrap();
        assert_eq!(w.physics.accel, 1.5);
        assert_eq!(w.physics.dt, 0.2);
        assert_eq!(w.road.road_length, 100.0);
        assert_eq!(w.geometry, CarGeometry::default());
        assert!(serde_json::from_str::<World>(r#"{"physics": {"acceleration": 1}}"#).is_err());
        w.validate().unwrap();
        let bad = World { geometry: CarGeometry { length: 5.0, width: 5.0 }, ..World::default() };
        assert!(bad.validate().is_err());
    }
}
