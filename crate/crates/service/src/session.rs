//! One study session: practice and recorded trials ticked in real time.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use comerge::experiments::{self, Condition, ConditionGrid};
use comerge::model::{Action, Side};
use comerge::planner::PlannerConfig;
use comerge::sim::{self, AgentPolicy, Decision, HumanModel, Mailbox, PlannerPolicy, RemotePolicy, TrialConfig, TrialOutcome, TrialRunner};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, watch};
use tokio::time::MissedTickBehavior;

use crate::protocol::{self, CarView, ClientMessage, Colors, ServerMessage, PROTOCOL_VERSION};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid session plan: {0}")]
    Plan(String),
}

const ROBOT_COLORS: [&str; 5] = ["red", "blue", "green", "orange", "purple"];
const HUMAN_COLOR: &str = "white";

#[derive(Debug, Clone, PartialEq)]
pub struct SessionPlan {
    /// Unrecorded warm-up trials run first.
    pub practice_trials: usize,
    pub recorded_trials: usize,
    pub seed: u64,
    /// Conditions are drawn uniformly from this grid; its planner is the robot's template.
    pub grid: ConditionGrid,
    pub tick_period: Duration,
    /// Slack left between the planner deadline and the next tick.
    pub planning_guard: Duration,
    pub questionnaire_timeout: Duration,
}

impl Default for SessionPlan {
    fn default() -> Self {
        let grid = ConditionGrid { planner: PlannerConfig::default(), ..ConditionGrid::default() };
        Self {
            practice_trials: 1,
            recorded_trials: 18,
            seed: 0,
            grid,
            tick_period: Duration::from_millis(200),
            planning_guard: Duration::from_millis(25),
            questionnaire_timeout: Duration::from_secs(60),
        }
    }
}

/// A trial as scheduled for one session.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub index: usize,
    pub practice: bool,
    pub condition: Condition,
    pub config: TrialConfig,
    pub colors: Colors,
}

impl SessionPlan {
    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.grid.conditions().is_empty() {
            return Err(ServiceError::Plan("the condition grid is empty".into()));
        }
        if self.planning_guard >= self.tick_period {
            return Err(ServiceError::Plan("planning guard must be shorter than the tick period".into()));
        }
        Ok(())
    }

    /// Planner wall-clock budget per tick.
    pub fn planning_budget(&self) -> Duration {
        self.tick_period.saturating_sub(self.planning_guard)
    }

    /// The trial sequence of the session seeded with `session_seed`.
    pub fn trials(&self, session_seed: u64) -> Vec<TrialSpec> {
        let conditions = self.grid.conditions();
        let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
        (0..self.practice_trials + self.recorded_trials)
            .map(|index| {
                let condition = conditions[rng.random_range(0..conditions.len())];
                let seed = rng.next_u64();
                let mut config = experiments::sample_trial(&condition, &self.grid, HumanModel::Remote, seed, &mut rng);
                config.planner.time_budget = self.planning_budget().as_secs_f64();
                let colors = Colors {
                    human: HUMAN_COLOR.into(),
                    robot: ROBOT_COLORS[rng.random_range(0..ROBOT_COLORS.len())].into(),
                };
                TrialSpec { index, practice: index < self.practice_trials, condition, config, colors }
            })
            .collect()
    }
}

/// A questionnaire answer as persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub trial_index: usize,
    pub q1: i8,
    pub q2: i8,
}

/// State shared between a session and the reader of its socket.
#[derive(Debug, Default)]
pub struct Inbox {
    pub mailbox: Mailbox,
    awaiting_answer: AtomicBool,
}

/// What the reader does with one client frame.
#[derive(Debug, PartialEq)]
pub enum Routed {
    Latched(Action),
    Answer { q1: i8, q2: i8 },
    Rejected(String),
}

impl Inbox {
    /// Handles a text frame. Actions overwrite the mailbox; questionnaires are
    /// only accepted while one is pending.
    pub fn route(&self, text: &str) -> Routed {
        match protocol::parse_client(text) {
            Ok(ClientMessage::Action { action, .. }) => {
                latch_action(&self.mailbox, action);
                Routed::Latched(action)
            }
            Ok(ClientMessage::Questionnaire { q1, q2 }) => {
                if self.awaiting_answer.load(Ordering::SeqCst) {
                    Routed::Answer { q1, q2 }
                } else {
                    Routed::Rejected("no questionnaire is pending".into())
                }
            }
            Err(e) => Routed::Rejected(e),
        }
    }
}

/// Latest action wins; the next tick consumes it.
pub fn latch_action(mailbox: &Mailbox, action: Action) {
    mailbox.latch(action);
}

/// The session's side of a client connection.
pub struct Link {
    pub out: mpsc::UnboundedSender<ServerMessage>,
    pub inbox: Arc<Inbox>,
    pub answers: mpsc::UnboundedReceiver<(i8, i8)>,
    /// Becomes true once the client is gone.
    pub closed: watch::Receiver<bool>,
}

impl Link {
    fn send(&self, msg: ServerMessage) {
        // A closed channel means the client left; the trial loop notices via `closed`.
        let _ = self.out.send(msg);
    }

    fn is_closed(&self) -> bool {
        *self.closed.borrow()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialReport {
    pub index: usize,
    pub practice: bool,
    pub outcome: TrialOutcome,
    pub answer: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub session_id: String,
    pub trials: Vec<TrialReport>,
    /// False when the client disconnected before the end.
    pub completed: bool,
}

pub fn trial_log_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("trial_{index:02}.jsonl"))
}

fn append_answer(dir: &Path, answer: &Answer) -> Result<(), ServiceError> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("questionnaire.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(answer).expect("plain struct"))?;
    Ok(())
}

async fn plan_robot(mut robot: PlannerPolicy, state: comerge::model::WorldState) -> (PlannerPolicy, Result<Decision, String>) {
    tokio::task::spawn_blocking(move || {
        let d = robot.decide(&state, Side::Robot).map_err(|e| e.to_string());
        (robot, d)
    })
    .await
    .expect("planner task panicked")
}

/// Runs one trial in real time. Returns `None` if the client disconnected.
async fn run_trial(plan: &SessionPlan, spec: &TrialSpec, link: &Link, dir: &Path) -> Result<Option<TrialOutcome>, ServiceError> {
    let cfg = &spec.config;
    // Cleared first so an action answering trial_start is kept.
    link.inbox.mailbox.take();
    link.send(ServerMessage::TrialStart {
        trial_index: spec.index,
        practice: spec.practice,
        road_length: cfg.road.road_length,
        human_start_lane: cfg.start_lane_human,
        human_goal_lane: cfg.road.goal_lane_human,
        av_indicator_lane: cfg.road.goal_lane_robot,
        colors: spec.colors.clone(),
    });
    let mut runner = TrialRunner::new(cfg.clone())?;
    let mut human = RemotePolicy { mailbox: link.inbox.mailbox.clone() };
    let (mut robot, mut robot_decision) = plan_robot(sim::robot_policy(cfg), *runner.state()).await;

    let mut ticker = tokio::time::interval(plan.tick_period);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    ticker.tick().await;
    let mut closed = link.closed.clone();
    loop {
        tokio::select! {
            _ = ticker.tick() => {}
            _ = closed.wait_for(|c| *c) => {}
        }
        if link.is_closed() {
            runner.abort("client disconnected");
            break;
        }
        let decisions = robot_decision.and_then(|r| {
            let h = human.decide(runner.state(), Side::Human).map_err(|e| e.to_string())?;
            Ok((h, r))
        });
        let (h, r) = match decisions {
            Ok(d) => d,
            Err(e) => {
                runner.abort(e);
                break;
            }
        };
        let rec = runner.apply(h, r).clone();
        let state = *runner.state();
        link.send(ServerMessage::Tick {
            tick: rec.tick,
            time_s: rec.time_s,
            cars: CarView::pair(&state),
            distance_remaining_m: protocol::distance_remaining(&state, cfg.road.road_length, cfg.geometry.length),
            av_indicator_lane: cfg.road.goal_lane_robot,
        });
        if runner.is_done() {
            break;
        }
        (robot, robot_decision) = plan_robot(robot, state).await;
    }

    let (outcome, log) = runner.finish();
    if !spec.practice {
        log.save(&trial_log_path(dir, spec.index))?;
    }
    Ok((!outcome.aborted).then_some(outcome))
}

async fn await_answer(plan: &SessionPlan, link: &mut Link, index: usize) -> Option<Answer> {
    let got = tokio::time::timeout(plan.questionnaire_timeout, async {
        loop {
            tokio::select! {
                a = link.answers.recv() => return a,
                _ = link.closed.wait_for(|c| *c) => return None,
            }
        }
    })
    .await
    .ok()
    .flatten();
    link.inbox.awaiting_answer.store(false, Ordering::SeqCst);
    while link.answers.try_recv().is_ok() {}
    got.map(|(q1, q2)| Answer { trial_index: index, q1, q2 })
}

/// Runs the whole session: hello, every trial, then bye. Recorded trial
/// logs and questionnaire answers are written under `dir`.
pub async fn run_session(
    plan: &SessionPlan,
    session_id: &str,
    session_seed: u64,
    dir: &Path,
    mut link: Link,
) -> Result<SessionReport, ServiceError> {
    plan.validate()?;
    std::fs::create_dir_all(dir)?;
    link.send(ServerMessage::Hello { protocol_version: PROTOCOL_VERSION.into(), session_id: session_id.into() });
    let mut report = SessionReport { session_id: session_id.into(), trials: Vec::new(), completed: false };
    for spec in plan.trials(session_seed) {
        let Some(outcome) = run_trial(plan, &spec, &link, dir).await? else {
            return Ok(report);
        };
        let mut answer = None;
        if !spec.practice {
            link.inbox.awaiting_answer.store(true, Ordering::SeqCst);
        }
        link.send(ServerMessage::TrialEnd { trial_index: spec.index, outcome: outcome.clone() });
        if !spec.practice {
            answer = await_answer(plan, &mut link, spec.index).await;
            if let Some(a) = &answer {
                append_answer(dir, a)?;
            }
        }
        report.trials.push(TrialReport { index: spec.index, practice: spec.practice, outcome, answer });
        if link.is_closed() {
            return Ok(report);
        }
    }
    link.send(ServerMessage::Bye {});
    report.completed = true;
    Ok(report)
}
