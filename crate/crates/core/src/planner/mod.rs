//! Collaborative joint-action planner.
//!
//! The planner searches over sequences of joint (human, robot) actions and
//! maximizes the scalarized reward `alpha * R_robot + (1 - alpha) * R_human`.
//! Each planner step holds one joint action for several simulation ticks.

mod oracle;
mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, JointAction, World, WorldState, MAX_REWARD};

pub use oracle::{brute_force_plan, selfish_baseline_action, BaselineChoice, ORACLE_MAX_DEPTH};
pub use search::{find_optimal_action, search, ActionSpace, SearchNode, SearchOutcome, SearchStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("invalid planner config: {0}")]
    InvalidConfig(String),
    #[error("enumeration depth {depth} exceeds the oracle cap of {cap}")]
    DepthTooLarge { depth: usize, cap: usize },
}

/// Bin sizes used to key the closed set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Quantization {
    pub dy: f64,
    pub dx: f64,
    pub dv: f64,
}

impl Default for Quantization {
    fn default() -> Self {
        Self { dy: 0.01, dx: 0.01, dv: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Weight of the robot's reward; `1 - alpha` goes to the human.
    pub alpha: f64,
    pub horizon: f64,
    pub planner_dt: f64,
    pub sim_dt: f64,
    /// Wall-clock budget in seconds. Non-finite means unlimited.
    pub time_budget: f64,
    pub rng_seed: u64,
    pub quantization: Quantization,
    /// Optional cap on node expansions; unlike the wall clock it is reproducible.
    pub max_expansions: Option<u64>,
    /// Break on `f < R_max`. Only disabled to measure the prune itself.
    pub pruning: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            horizon: 6.0,
            planner_dt: 1.0,
            sim_dt: 0.2,
            time_budget: 0.2,
            rng_seed: 0,
            quantization: Quantization::default(),
            max_expansions: None,
            pruning: true,
        }
    }
}

fn whole_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() < 1e-9 && n >= 0.0).then_some(n as usize)
}

impl PlannerConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// No wall-clock or expansion limit.
    pub fn unlimited(mut self) -> Self {
        self.time_budget = f64::INFINITY;
        self.max_expansions = None;
        self
    }

    /// Horizon expressed in planner steps.
    pub fn max_depth(&self) -> usize {
        whole_ratio(self.horizon, self.planner_dt).unwrap_or(0)
    }

    /// Simulation ticks per planner step.
    pub fn substeps(&self) -> usize {
        whole_ratio(self.planner_dt, self.sim_dt).unwrap_or(1).max(1)
    }

    pub fn validate(&self, world: &World) -> Result<(), PlannerError> {
        let err = |m: &str| Err(PlannerError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return err("alpha must lie in [0, 1]");
        }
        if !(self.sim_dt > 0.0 && self.planner_dt > 0.0 && self.horizon >= 0.0) {
            return err("time steps must be positive");
        }
        if whole_ratio(self.planner_dt, self.sim_dt).map_or(true, |n| n == 0) {
            return err("planner_dt must be a positive multiple of sim_dt");
        }
        if whole_ratio(self.horizon, self.planner_dt).is_none() {
            return err("horizon must be a multiple of planner_dt");
        }
        if (self.sim_dt - world.physics.dt).abs() > 1e-12 {
            return err("sim_dt must equal the physics time step");
        }
        if self.time_budget.is_nan() || self.time_budget <= 0.0 {
            return err("time_budget must be positive");
        }
        Ok(())
    }
}

fn weigh(alpha: f64, robot: f64, human: f64) -> f64 {
    alpha * robot + (1.0 - alpha) * human
}

/// Scalarized instantaneous reward of a state.
pub fn joint_reward(s: &WorldState, alpha: f64, world: &World) -> f64 {
    let (human, robot) = model::rewards(s, world);
    weigh(alpha, robot, human)
}

/// Result of holding one joint action for a planner step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroOutcome {
    pub state: WorldState,
    pub joint: f64,
    pub robot: f64,
    pub human: f64,
    pub terminal: bool,
}

struct LaneRewardCache {
    x: f64,
    reward: f64,
}

impl Default for LaneRewardCache {
    fn default() -> Self {
        Self { x: f64::NAN, reward: 0.0 }
    }
}

impl LaneRewardCache {
    #[inline]
    fn get(&mut self, x: f64, goal: u8, road: &model::RoadConfig) -> f64 {
        if x != self.x {
            self.x = x;
            self.reward = model::lane_reward(x, goal, road);
        }
        self.reward
    }
}

/// Applies `u` for `substeps` ticks, summing the reward after each tick.
///
/// A turn that becomes disallowed part way through degrades to `Stay`.
/// Accumulation stops at the first terminal tick.
pub fn macro_step_n(s: &WorldState, u: JointAction, alpha: f64, substeps: usize, world: &World) -> MacroOutcome {
    let mut out = MacroOutcome { state: *s, joint: 0.0, robot: 0.0, human: 0.0, terminal: false };
    let road = &world.road;
    // Lane rewards keyed by x: a car that is not turning keeps its x, and
    // recomputing the exponential for it dominates the planner's cost.
    let mut human_lane = LaneRewardCache::default();
    let mut robot_lane = LaneRewardCache::default();
    for _ in 0..substeps {
        out.state = model::sanitized_transition(&out.state, u, world);
        let (human, robot) = if model::check_collision(&out.state, &world.geometry) {
            (model::COLLISION_REWARD, model::COLLISION_REWARD)
        } else {
            (
                human_lane.get(out.state.human.x, road.goal_lane_human, road),
                robot_lane.get(out.state.robot.x, road.goal_lane_robot, road),
            )
        };
        out.joint += weigh(alpha, robot, human);
        out.robot += robot;
        out.human += human;
        if model::is_terminal(&out.state, world) {
            out.terminal = true;
            break;
        }
    }
    out
}

pub fn macro_step(s: &WorldState, u: JointAction, cfg: &PlannerConfig, world: &World) -> MacroOutcome {
    macro_step_n(s, u, cfg.alpha, cfg.substeps(), world)
}

/// Optimistic bound on the reward still obtainable in `remaining_steps`.
pub fn heuristic(remaining_steps: usize, substeps: usize) -> f64 {
    remaining_steps as f64 * substeps as f64 * MAX_REWARD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub actions: Vec<JointAction>,
    /// Accumulated joint reward.
    pub value: f64,
    /// Root state followed by the state after each planner step.
    pub trajectory: Vec<WorldState>,
    /// False when the budget cut the search short.
    pub complete: bool,
    pub robot_reward: f64,
    pub human_reward: f64,
}

impl Plan {
    pub fn empty(root: &WorldState, complete: bool) -> Self {
        Self {
            actions: Vec::new(),
            value: 0.0,
            trajectory: vec![*root],
            complete,
            robot_reward: 0.0,
            human_reward: 0.0,
        }
    }

    /// Re-simulates `actions` from `root`, accumulating exactly as the search does.
    pub fn simulate(root: &WorldState, actions: &[JointAction], cfg: &PlannerConfig, world: &World) -> Self {
        let mut plan = Self::empty(root, true);
        let mut state = *root;
        for &u in actions {
            let mo = macro_step(&state, u, cfg, world);
            plan.value += mo.joint;
            plan.robot_reward += mo.robot;
            plan.human_reward += mo.human;
            plan.actions.push(u);
            plan.trajectory.push(mo.state);
            state = mo.state;
            if mo.terminal {
                break;
            }
        }
        plan
    }

    pub fn first(&self) -> Option<JointAction> {
        self.actions.first().copied()
    }
}
