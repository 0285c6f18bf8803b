//! Closed-loop trials: policies, the tick loop, JSON Lines logs and replay.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    self, Action, CarGeometry, CarState, JointAction, PhysicsParams, RoadConfig, Side, World, WorldState,
};
use crate::planner::{search, ActionSpace, PlannerConfig, SearchStats};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid trial config: {0}")]
    InvalidConfig(String),
    #[error("log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log line {line}: nothing may follow the abort line")]
    TrailingData { line: usize },
    #[error("log is missing its header line")]
    MissingHeader,
    #[error("replay diverged from the log at tick {tick}")]
    Divergence { tick: u64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("policy failed: {0}")]
pub struct PolicyError(pub String);

/// An action choice plus the planner's counters, when a planner made it.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub stats: Option<SearchStats>,
}

impl From<Action> for Decision {
    fn from(action: Action) -> Self {
        Self { action, stats: None }
    }
}

/// Chooses one car's action each tick. The engine sanitizes the result.
pub trait AgentPolicy: Send {
    fn decide(&mut self, state: &WorldState, side: Side) -> Result<Decision, PolicyError>;
}

/// How the human car is driven in a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HumanModel {
    /// Runs the joint planner weighting its own reward by `alpha_h` and
    /// executes the human half of the plan.
    CooperativePlanner { alpha_h: f64 },
    /// Optimizes its own reward, predicting the robot holds its speed.
    SelfishPlanner,
    ConstantVelocity,
    /// Latest action received from a remote driver.
    Remote,
}

impl Default for HumanModel {
    fn default() -> Self {
        HumanModel::CooperativePlanner { alpha_h: 0.5 }
    }
}

impl fmt::Display for HumanModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HumanModel::CooperativePlanner { alpha_h } => write!(f, "cooperative:{alpha_h}"),
            HumanModel::SelfishPlanner => f.write_str("selfish"),
            HumanModel::ConstantVelocity => f.write_str("constant"),
            HumanModel::Remote => f.write_str("remote"),
        }
    }
}

impl FromStr for HumanModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(n, a)| (n, Some(a)));
        match (name, arg) {
            ("cooperative", None) => Ok(HumanModel::default()),
            ("cooperative", Some(a)) => {
                let alpha_h: f64 = a.parse().map_err(|_| format!("bad weight in {s:?}"))?;
                if !(0.0..=1.0).contains(&alpha_h) {
                    return Err(format!("weight out of [0, 1] in {s:?}"));
                }
                Ok(HumanModel::CooperativePlanner { alpha_h })
            }
            ("selfish", None) => Ok(HumanModel::SelfishPlanner),
            ("constant", None) => Ok(HumanModel::ConstantVelocity),
            ("remote", None) => Ok(HumanModel::Remote),
            _ => Err(format!("unknown human model {s:?}")),
        }
    }
}

/// Drives one side with the joint planner.
pub struct PlannerPolicy {
    cfg: PlannerConfig,
    world: World,
    space: ActionSpace,
    rng: ChaCha8Rng,
    fixed_seed: Option<u64>,
}

impl PlannerPolicy {
    /// `cfg.alpha` is the planner's weight on the robot's reward.
    /// Draws a fresh tie-breaking seed for every call.
    pub fn new(cfg: PlannerConfig, world: World, space: ActionSpace, seed: u64) -> Self {
        Self { cfg, world, space, rng: ChaCha8Rng::seed_from_u64(seed), fixed_seed: None }
    }

    /// Breaks ties with the same seed on every call, so an indifferent agent
    /// keeps to one maneuver instead of switching between equal plans.
    pub fn consistent(mut self) -> Self {
        self.fixed_seed = Some(self.rng.next_u64());
        self
    }

    pub fn robot(cfg: &PlannerConfig, world: World, seed: u64) -> Self {
        Self::new(cfg.clone(), world, ActionSpace::joint(), seed).consistent()
    }

    pub fn cooperative_human(cfg: &PlannerConfig, alpha_h: f64, world: World, seed: u64) -> Self {
        Self::new(cfg.clone().with_alpha(1.0 - alpha_h), world, ActionSpace::joint(), seed).consistent()
    }

    pub fn selfish_human(cfg: &PlannerConfig, world: World, seed: u64) -> Self {
        Self::new(cfg.clone().with_alpha(0.0), world, ActionSpace::human_only(), seed).consistent()
    }

    pub fn config_mut(&mut self) -> &mut PlannerConfig {
        &mut self.cfg
    }
}

impl AgentPolicy for PlannerPolicy {
    fn decide(&mut self, state: &WorldState, side: Side) -> Result<Decision, PolicyError> {
        let seed = match self.fixed_seed {
            Some(seed) => seed,
            None => self.rng.next_u64(),
        };
        let cfg = PlannerConfig { rng_seed: seed, ..self.cfg.clone() };
        let out = search(state, &cfg, &self.world, &self.space);
        let action = out.action.map_or(Action::Stay, |u| match side {
            Side::Human => u.human,
            Side::Robot => u.robot,
        });
        Ok(Decision { action, stats: Some(out.stats) })
    }
}

pub struct ConstantVelocity;

impl AgentPolicy for ConstantVelocity {
    fn decide(&mut self, _: &WorldState, _: Side) -> Result<Decision, PolicyError> {
        Ok(Action::Stay.into())
    }
}

/// Single-slot, latest-wins action box shared with a remote writer.
#[derive(Debug, Clone, Default)]
pub struct Mailbox(Arc<Mutex<Option<Action>>>);

impl Mailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latch(&self, action: Action) {
        *self.0.lock().unwrap_or_else(|e| e.into_inner()) = Some(action);
    }

    pub fn take(&self) -> Option<Action> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

/// Consumes the mailbox once per tick; `Stay` when nothing arrived.
pub struct RemotePolicy {
    pub mailbox: Mailbox,
}

impl AgentPolicy for RemotePolicy {
    fn decide(&mut self, _: &WorldState, _: Side) -> Result<Decision, PolicyError> {
        Ok(self.mailbox.take().unwrap_or(Action::Stay).into())
    }
}

/// Replays a fixed action list, then holds `Stay`.
pub struct ScriptedPolicy {
    actions: std::vec::IntoIter<Action>,
}

impl ScriptedPolicy {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions: actions.into_iter() }
    }
}

impl AgentPolicy for ScriptedPolicy {
    fn decide(&mut self, _: &WorldState, _: Side) -> Result<Decision, PolicyError> {
        Ok(self.actions.next().unwrap_or(Action::Stay).into())
    }
}

/// Setup of one double-merge episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub road: RoadConfig,
    pub physics: PhysicsParams,
    #[serde(default)]
    pub geometry: CarGeometry,
    pub planner: PlannerConfig,
    pub human_model: HumanModel,
    pub start_lane_robot: u8,
    pub start_lane_human: u8,
    pub v0_human: f64,
    pub v0_robot: f64,
    pub y0: f64,
    pub max_ticks: u64,
    pub seed: u64,
}

/// Tick cap: the ticks a car at 5 m/s needs to cover the road.
pub fn default_max_ticks(road_length: f64, dt: f64) -> u64 {
    (road_length / (5.0 * dt)).ceil() as u64
}

impl TrialConfig {
    /// A double merge: each car's goal is the other's start lane.
    pub fn double_merge(
        road_length: f64,
        start_lane_human: u8,
        v0_human: f64,
        v0_robot: f64,
        planner: PlannerConfig,
        human_model: HumanModel,
        seed: u64,
    ) -> Self {
        let start_lane_robot = 1 - start_lane_human.min(1);
        let physics = PhysicsParams::default();
        Self {
            road: RoadConfig {
                road_length,
                goal_lane_robot: start_lane_human,
                goal_lane_human: start_lane_robot,
                ..RoadConfig::default()
            },
            physics,
            geometry: CarGeometry::default(),
            planner,
            human_model,
            start_lane_robot,
            start_lane_human,
            v0_human,
            v0_robot,
            y0: 0.0,
            max_ticks: default_max_ticks(road_length, physics.dt),
            seed,
        }
    }

    pub fn world(&self) -> World {
        World { physics: self.physics, road: self.road, geometry: self.geometry }
    }

    pub fn initial_state(&self) -> WorldState {
        WorldState::new(
            CarState::new(self.y0, self.road.lane_center(self.start_lane_human), self.v0_human),
            CarState::new(self.y0, self.road.lane_center(self.start_lane_robot), self.v0_robot),
        )
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        self.world().validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.planner.validate(&self.world()).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.start_lane_robot > 1 || self.start_lane_human > 1 || self.start_lane_robot == self.start_lane_human {
            return bad("start lanes must be 0 and 1 in some order".into());
        }
        if self.road.goal_lane_robot != self.start_lane_human || self.road.goal_lane_human != self.start_lane_robot {
            return bad("goal lanes must swap the start lanes".into());
        }
        let p = &self.physics;
        for v in [self.v0_human, self.v0_robot] {
            if !(p.v_min..=p.v_max).contains(&v) {
                return bad(format!("initial speed {v} outside [{}, {}]", p.v_min, p.v_max));
            }
        }
        Ok(())
    }
}

/// Planner counters kept in the log; wall time is left out so logs are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerDiag {
    pub nodes_expanded: u64,
    pub nodes_pruned: u64,
    pub complete: bool,
}

impl From<&SearchStats> for PlannerDiag {
    fn from(s: &SearchStats) -> Self {
        Self { nodes_expanded: s.nodes_expanded, nodes_pruned: s.nodes_pruned, complete: s.complete }
    }
}

/// One simulated tick: the applied actions and the state they produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Simulation time of the resulting state.
    pub time_s: f64,
    pub human: CarState,
    pub robot: CarState,
    pub human_action: Action,
    pub robot_action: Action,
    pub r_h: f64,
    pub r_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerDiag>,
}

/// Last line of the log of an aborted trial.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AbortTrailer {
    aborted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub header: TrialConfig,
    pub records: Vec<TickRecord>,
    /// Set when a policy failed or the driver disconnected.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub merged_human: bool,
    pub merged_robot: bool,
    pub merge_time_human: Option<f64>,
    pub merge_time_robot: Option<f64>,
    pub collision: bool,
    pub total_r_h: f64,
    pub total_r_r: f64,
    pub ticks: u64,
    #[serde(default)]
    pub aborted: bool,
}

impl TrialLog {
    pub fn new(header: TrialConfig) -> Self {
        Self { header, records: Vec::new(), aborted: None }
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        serde_json::to_writer(&mut out, &self.header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        if let Some(reason) = &self.aborted {
            serde_json::to_writer(&mut out, &AbortTrailer { aborted: reason.clone() }).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, SimError> {
        let mut lines = input.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, first) = lines.next().ok_or(SimError::MissingHeader)?;
        let header = serde_json::from_str(&first?).map_err(|source| SimError::Parse { line: 1, source })?;
        let mut log = TrialLog::new(header);
        for (i, line) in lines {
            let line = line?;
            if log.aborted.is_some() {
                return Err(SimError::TrailingData { line: i + 1 });
            }
            match serde_json::from_str::<TickRecord>(&line) {
                Ok(rec) => log.records.push(rec),
                Err(source) => match serde_json::from_str::<AbortTrailer>(&line) {
                    Ok(t) => log.aborted = Some(t.aborted),
                    Err(_) => return Err(SimError::Parse { line: i + 1, source }),
                },
            }
        }
        Ok(log)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), SimError> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimError> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    /// Initial state followed by every logged state.
    pub fn states(&self) -> Vec<WorldState> {
        let init = self.header.initial_state();
        std::iter::once(init)
            .chain(self.records.iter().map(|r| WorldState { human: r.human, robot: r.robot, step: r.tick + 1 }))
            .collect()
    }

    pub fn collided(&self) -> bool {
        let g = self.header.geometry;
        self.records
            .last()
            .is_some_and(|r| model::check_collision(&WorldState::new(r.human, r.robot), &g))
    }
}

/// Time at which the car entered its goal lane for the last time and then
/// stayed there, or `None` if it does not end in its goal lane. After a
/// collision only the states before the crash count.
pub fn compute_merge_time(log: &TrialLog, side: Side) -> Option<f64> {
    let road = &log.header.road;
    let goal = road.goal_lane(side);
    let mut points: Vec<(f64, f64)> = vec![(0.0, log.header.initial_state().car(side).x)];
    points.extend(log.records.iter().map(|r| {
        let car = match side {
            Side::Human => r.human,
            Side::Robot => r.robot,
        };
        (r.time_s, car.x)
    }));
    if log.collided() {
        points.pop();
    }
    let in_goal = |x: f64| model::lane_position(x, road).map_or(false, |p| p.lane == goal);
    if !points.last().is_some_and(|&(_, x)| in_goal(x)) {
        return None;
    }
    let entry = points.iter().rposition(|&(_, x)| !in_goal(x)).map_or(0, |i| i + 1);
    Some(points[entry].0)
}

pub fn compute_outcome(log: &TrialLog) -> TrialOutcome {
    let merge_time_human = compute_merge_time(log, Side::Human);
    let merge_time_robot = compute_merge_time(log, Side::Robot);
    TrialOutcome {
        merged_human: merge_time_human.is_some(),
        merged_robot: merge_time_robot.is_some(),
        merge_time_human,
        merge_time_robot,
        collision: log.collided(),
        total_r_h: log.records.iter().map(|r| r.r_h).sum(),
        total_r_r: log.records.iter().map(|r| r.r_r).sum(),
        ticks: log.records.len() as u64,
        aborted: log.aborted.is_some(),
    }
}

/// Stepwise trial loop, for callers that pace ticks themselves.
pub struct TrialRunner {
    world: World,
    state: WorldState,
    log: TrialLog,
}

impl TrialRunner {
    pub fn new(cfg: TrialConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        Ok(Self { world: cfg.world(), state: cfg.initial_state(), log: TrialLog::new(cfg) })
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn config(&self) -> &TrialConfig {
        &self.log.header
    }

    pub fn is_done(&self) -> bool {
        self.log.aborted.is_some()
            || model::is_terminal(&self.state, &self.world)
            || self.log.records.len() as u64 >= self.log.header.max_ticks
    }

    /// Sanitizes both actions, steps the world and logs the tick.
    pub fn apply(&mut self, human: Decision, robot: Decision) -> &TickRecord {
        let u = JointAction::new(
            model::sanitize(&self.state.human, human.action, &self.world),
            model::sanitize(&self.state.robot, robot.action, &self.world),
        );
        let tick = self.state.step;
        self.state = model::sanitized_transition(&self.state, u, &self.world);
        let (r_h, r_r) = model::rewards(&self.state, &self.world);
        self.log.records.push(TickRecord {
            tick,
            time_s: self.state.step as f64 * self.world.physics.dt,
            human: self.state.human,
            robot: self.state.robot,
            human_action: u.human,
            robot_action: u.robot,
            r_h,
            r_r,
            planner: robot.stats.as_ref().map(PlannerDiag::from),
        });
        self.log.records.last().expect("just pushed")
    }

    pub fn abort(&mut self, reason: impl Into<String>) {
        self.log.aborted = Some(reason.into());
    }

    pub fn finish(self) -> (TrialOutcome, TrialLog) {
        (compute_outcome(&self.log), self.log)
    }
}

/// Runs a trial to completion with the given policies.
pub fn run_trial(
    cfg: &TrialConfig,
    human: &mut dyn AgentPolicy,
    robot: &mut dyn AgentPolicy,
) -> Result<(TrialOutcome, TrialLog), SimError> {
    let mut runner = TrialRunner::new(cfg.clone())?;
    while !runner.is_done() {
        let state = *runner.state();
        let decisions = human.decide(&state, Side::Human).and_then(|h| Ok((h, robot.decide(&state, Side::Robot)?)));
        match decisions {
            Ok((h, r)) => {
                runner.apply(h, r);
            }
            Err(e) => runner.abort(e.to_string()),
        }
    }
    Ok(runner.finish())
}

const ROBOT_STREAM: u64 = 0x0052_4f42;
const HUMAN_STREAM: u64 = 0x0048_554d;

fn policy_seed(trial_seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn robot_policy(cfg: &TrialConfig) -> PlannerPolicy {
    PlannerPolicy::robot(&cfg.planner, cfg.world(), policy_seed(cfg.seed, ROBOT_STREAM))
}

/// Policy for the configured human model; `Remote` reads from `mailbox`.
pub fn human_policy(cfg: &TrialConfig, mailbox: Option<Mailbox>) -> Box<dyn AgentPolicy> {
    let seed = policy_seed(cfg.seed, HUMAN_STREAM);
    match cfg.human_model {
        HumanModel::CooperativePlanner { alpha_h } => {
            Box::new(PlannerPolicy::cooperative_human(&cfg.planner, alpha_h, cfg.world(), seed))
        }
        HumanModel::SelfishPlanner => Box::new(PlannerPolicy::selfish_human(&cfg.planner, cfg.world(), seed)),
        HumanModel::ConstantVelocity => Box::new(ConstantVelocity),
        HumanModel::Remote => Box::new(RemotePolicy { mailbox: mailbox.unwrap_or_default() }),
    }
}

/// Runs a headless trial with the policies named in the config.
pub fn simulate(cfg: &TrialConfig) -> Result<(TrialOutcome, TrialLog), SimError> {
    let mut human = human_policy(cfg, None);
    let mut robot = robot_policy(cfg);
    run_trial(cfg, human.as_mut(), &mut robot)
}

fn same_bits(a: &CarState, b: &CarState) -> bool {
    a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits() && a.v.to_bits() == b.v.to_bits()
}

/// Re-simulates the logged actions and checks every logged state bit for bit.
pub fn replay(log: &TrialLog) -> Result<Vec<WorldState>, SimError> {
    let world = log.header.world();
    let mut state = log.header.initial_state();
    let mut out = Vec::with_capacity(log.records.len());
    for (i, r) in log.records.iter().enumerate() {
        let u = JointAction::new(r.human_action, r.robot_action);
        let next = model::transition(&state, u, &world).map_err(|_| SimError::Divergence { tick: r.tick })?;
        let (r_h, r_r) = model::rewards(&next, &world);
        let consistent = r.tick == i as u64
            && same_bits(&next.human, &r.human)
            && same_bits(&next.robot, &r.robot)
            && r_h.to_bits() == r.r_h.to_bits()
            && r_r.to_bits() == r.r_r.to_bits();
        if !consistent {
            return Err(SimError::Divergence { tick: r.tick });
        }
        out.push(next);
        state = next;
    }
    Ok(out)
}
