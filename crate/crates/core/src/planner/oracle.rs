//! Exhaustive enumeration: the reference optimum and the selfish nested baseline.

use super::{macro_step, Plan, PlannerConfig, PlannerError};
use crate::model::{self, Action, JointAction, World, WorldState};

/// Deepest enumeration allowed (25^3 sequences).
pub const ORACLE_MAX_DEPTH: usize = 3;

fn check_depth(depth: usize) -> Result<(), PlannerError> {
    if depth > ORACLE_MAX_DEPTH {
        return Err(PlannerError::DepthTooLarge { depth, cap: ORACLE_MAX_DEPTH });
    }
    Ok(())
}

struct Enumerator<'a> {
    cfg: &'a PlannerConfig,
    world: &'a World,
    path: Vec<JointAction>,
    best_value: f64,
    best_path: Vec<JointAction>,
}

impl Enumerator<'_> {
    fn visit(&mut self, s: &WorldState, g: f64, remaining: usize) {
        for u in JointAction::all() {
            let mo = macro_step(s, u, self.cfg, self.world);
            let value = g + mo.joint;
            self.path.push(u);
            if mo.terminal || remaining == 1 {
                if value > self.best_value {
                    self.best_value = value;
                    self.best_path.clone_from(&self.path);
                }
            } else {
                self.visit(&mo.state, value, remaining - 1);
            }
            self.path.pop();
        }
    }
}

/// Maximum-value plan over every joint action sequence of length `depth`.
///
/// Uses the same macro-step arithmetic as the search. Ties keep the first
/// sequence in enumeration order.
pub fn brute_force_plan(s: &WorldState, depth: usize, cfg: &PlannerConfig, world: &World) -> Result<Plan, PlannerError> {
    check_depth(depth)?;
    if depth == 0 || model::is_terminal(s, world) {
        return Ok(Plan::empty(s, true));
    }
    let mut e = Enumerator { cfg, world, path: Vec::new(), best_value: f64::NEG_INFINITY, best_path: Vec::new() };
    e.visit(s, 0.0, depth);
    Ok(Plan::simulate(s, &e.best_path, cfg, world))
}

/// Outcome of the nested robot-first optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineChoice {
    pub action: Action,
    pub robot_plan: Vec<Action>,
    /// The human's best response to `robot_plan`.
    pub human_response: Vec<Action>,
    pub robot_reward: f64,
    pub human_reward: f64,
}

fn sequences(depth: usize) -> Vec<Vec<Action>> {
    let mut out = vec![Vec::new()];
    for _ in 0..depth {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                Action::ALL.into_iter().map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

fn rollout(s: &WorldState, robot: &[Action], human: &[Action], cfg: &PlannerConfig, world: &World) -> (f64, f64) {
    let joint: Vec<JointAction> = human.iter().zip(robot).map(|(&h, &r)| JointAction::new(h, r)).collect();
    let plan = Plan::simulate(s, &joint, cfg, world);
    (plan.robot_reward, plan.human_reward)
}

/// Robot maximizes its own reward, assuming the human best-responds to the
/// robot's whole plan with the human's own reward.
pub fn selfish_baseline_action(
    s: &WorldState,
    depth: usize,
    cfg: &PlannerConfig,
    world: &World,
) -> Result<BaselineChoice, PlannerError> {
    check_depth(depth)?;
    let seqs = sequences(depth);
    let mut best: Option<BaselineChoice> = None;
    for robot_plan in &seqs {
        let mut response: Option<(&Vec<Action>, f64, f64)> = None;
        for human_plan in &seqs {
            let (r, h) = rollout(s, robot_plan, human_plan, cfg, world);
            if response.map_or(true, |(_, best_h, _)| h > best_h) {
                response = Some((human_plan, h, r));
            }
        }
        let (human_plan, h, r) = response.expect("at least one sequence");
        if best.as_ref().map_or(true, |b| r > b.robot_reward) {
            best = Some(BaselineChoice {
                action: robot_plan.first().copied().unwrap_or(Action::Stay),
                robot_plan: robot_plan.clone(),
                human_response: human_plan.clone(),
                robot_reward: r,
                human_reward: h,
            });
        }
    }
    Ok(best.expect("at least one sequence"))
}
