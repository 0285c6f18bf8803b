//! Batch experiments over the road-length by selfishness-factor grid.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CarGeometry, PhysicsParams, Side};
use crate::planner::PlannerConfig;
use crate::sim::{self, HumanModel, SimError, TrialConfig, TrialLog, TrialOutcome};
use crate::stats;

pub const HUMAN_START_SPEED: f64 = 15.0;
pub const ROBOT_SPEED_MEAN: f64 = 15.0;
pub const ROBOT_SPEED_STD: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config: {0}")]
    Config(String),
}

/// Expansion cap used by batch runs so that results do not depend on machine speed.
pub const BATCH_MAX_EXPANSIONS: u64 = 6500;

fn batch_planner() -> PlannerConfig {
    PlannerConfig { time_budget: 30.0, max_expansions: Some(BATCH_MAX_EXPANSIONS), ..PlannerConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionGrid {
    pub road_lengths: Vec<f64>,
    pub alphas: Vec<f64>,
    pub trials_per_condition: usize,
    pub base_seed: u64,
    /// Template for every trial's planner; `alpha` and `rng_seed` are overwritten.
    pub planner: PlannerConfig,
    pub physics: PhysicsParams,
    pub geometry: CarGeometry,
}

impl Default for ConditionGrid {
    fn default() -> Self {
        Self {
            road_lengths: vec![100.0, 200.0],
            alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            trials_per_condition: 100,
            base_seed: 0,
            planner: batch_planner(),
            physics: PhysicsParams::default(),
            geometry: CarGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub road_length: f64,
    pub alpha: f64,
}

impl Condition {
    pub fn id(&self) -> String {
        format!("L{}_a{}", self.road_length, self.alpha)
    }
}

impl ConditionGrid {
    /// Road-length-major list of conditions.
    pub fn conditions(&self) -> Vec<Condition> {
        self.road_lengths
            .iter()
            .flat_map(|&road_length| self.alphas.iter().map(move |&alpha| Condition { road_length, alpha }))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

/// Draws one trial: uniform start-lane assignment, robot start speed from
/// N(15, 3) clamped to the speed limits, human at 15 m/s.
pub fn sample_trial(
    condition: &Condition,
    grid: &ConditionGrid,
    human_model: HumanModel,
    seed: u64,
    rng: &mut impl Rng,
) -> TrialConfig {
    let start_lane_human = u8::from(rng.random_bool(0.5));
    let normal = Normal::new(ROBOT_SPEED_MEAN, ROBOT_SPEED_STD).expect("valid normal");
    let p = &grid.physics;
    let v0_robot = normal.sample(rng).clamp(p.v_min, p.v_max);
    let planner = grid.planner.clone().with_alpha(condition.alpha);
    let mut cfg = TrialConfig::double_merge(
        condition.road_length,
        start_lane_human,
        HUMAN_START_SPEED,
        v0_robot,
        planner,
        human_model,
        seed,
    );
    cfg.physics = grid.physics;
    cfg.geometry = grid.geometry;
    cfg.planner.sim_dt = grid.physics.dt;
    cfg.max_ticks = sim::default_max_ticks(condition.road_length, grid.physics.dt);
    cfg
}

/// Lateral direction reversals, ignoring ticks without lateral motion.
pub fn oscillation_count(log: &TrialLog, side: Side) -> usize {
    let xs: Vec<f64> = log.states().iter().map(|s| s.car(side).x).collect();
    let signs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).map(f64::signum).collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub condition: Condition,
    pub trial_index: usize,
    pub outcome: TrialOutcome,
    pub oscillation_human: usize,
    pub oscillation_robot: usize,
    pub log: TrialLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub failure_rate: Option<f64>,
    pub merge_time_mean: Option<f64>,
    pub merge_time_se: Option<f64>,
    pub reward_mean: Option<f64>,
    pub reward_se: Option<f64>,
    pub oscillation_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n: usize,
    pub human: AgentSummary,
    pub robot: AgentSummary,
}

fn mean_opt(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| stats::mean(xs))
}

fn se_opt(xs: &[f64]) -> Option<f64> {
    stats::sample_std(xs).map(|s| s / (xs.len() as f64).sqrt())
}

fn summarize_agent(results: &[&TrialResult], side: Side) -> AgentSummary {
    let n = results.len();
    let pick = |r: &TrialResult| match side {
        Side::Human => (r.outcome.merge_time_human, r.outcome.total_r_h, r.oscillation_human),
        Side::Robot => (r.outcome.merge_time_robot, r.outcome.total_r_r, r.oscillation_robot),
    };
    let merge_times: Vec<f64> = results.iter().filter_map(|r| pick(r).0).collect();
    let rewards: Vec<f64> = results.iter().map(|r| pick(r).1).collect();
    let osc: Vec<f64> = results.iter().map(|r| pick(r).2 as f64).collect();
    AgentSummary {
        failure_rate: (n > 0).then(|| (n - merge_times.len()) as f64 / n as f64),
        merge_time_mean: mean_opt(&merge_times),
        merge_time_se: se_opt(&merge_times),
        reward_mean: mean_opt(&rewards),
        reward_se: se_opt(&rewards),
        oscillation_mean: mean_opt(&osc),
    }
}

/// Aggregates the results of one condition, in the order given.
pub fn summarize(condition: Condition, results: &[&TrialResult]) -> ConditionSummary {
    ConditionSummary {
        condition,
        n: results.len(),
        human: summarize_agent(results, Side::Human),
        robot: summarize_agent(results, Side::Robot),
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Condition-major, then trial index.
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<ConditionSummary>,
}

/// Runs every condition `trials_per_condition` times. Trial `i` of every
/// condition uses seed `base_seed + i`. Trials run in parallel; results are
/// ordered by condition, then trial index. Aborted trials are kept in
/// `trials` but left out of the summaries.
pub fn run_batch(grid: &ConditionGrid, human_model: HumanModel) -> Result<BatchResult, ExperimentError> {
    let conditions = grid.conditions();
    let jobs: Vec<(Condition, usize)> = conditions
        .iter()
        .flat_map(|c| (0..grid.trials_per_condition).map(move |i| (*c, i)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(condition, trial_index)| {
            let seed = grid.base_seed.wrapping_add(trial_index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = sample_trial(&condition, grid, human_model, seed, &mut rng);
            let (outcome, log) = sim::simulate(&cfg)?;
            Ok(TrialResult {
                condition,
                trial_index,
                oscillation_human: oscillation_count(&log, Side::Human),
                oscillation_robot: oscillation_count(&log, Side::Robot),
                outcome,
                log,
            })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let summaries = conditions
        .iter()
        .map(|c| {
            let rs: Vec<&TrialResult> =
                trials.iter().filter(|t| t.condition == *c && !t.outcome.aborted).collect();
            summarize(*c, &rs)
        })
        .collect();
    Ok(BatchResult { trials, summaries })
}

pub const CSV_HEADER: [&str; 13] = [
    "road_length",
    "alpha",
    "n",
    "hv_failure_rate",
    "av_failure_rate",
    "hv_merge_time_mean",
    "hv_merge_time_se",
    "av_merge_time_mean",
    "av_merge_time_se",
    "hv_reward_mean",
    "av_reward_mean",
    "hv_osc_mean",
    "av_osc_mean",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per condition. Rewards are per-trial sums; merge-time
/// statistics cover successful merges only. Missing values are empty cells.
pub fn export_summaries(summaries: &[ConditionSummary]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in summaries {
        w.write_record([
            s.condition.road_length.to_string(),
            s.condition.alpha.to_string(),
            s.n.to_string(),
            cell(s.human.failure_rate),
            cell(s.robot.failure_rate),
            cell(s.human.merge_time_mean),
            cell(s.human.merge_time_se),
            cell(s.robot.merge_time_mean),
            cell(s.robot.merge_time_se),
            cell(s.human.reward_mean),
            cell(s.robot.reward_mean),
            cell(s.human.oscillation_mean),
            cell(s.robot.oscillation_mean),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv of ascii fields"))
}

/// A parsed summary row: `road_length`, `alpha`, `n`, then the ten metric
/// columns in header order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub road_length: f64,
    pub alpha: f64,
    pub n: usize,
    pub metrics: [Option<f64>; 10],
}

pub fn parse_summaries(text: &str) -> Result<Vec<SummaryRow>, ExperimentError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(ExperimentError::Config(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| ExperimentError::Config(format!("{s:?}: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut metrics = [None; 10];
        for (i, m) in metrics.iter_mut().enumerate() {
            let field = &rec[i + 3];
            *m = if field.is_empty() { None } else { Some(num(field)?) };
        }
        rows.push(SummaryRow {
            road_length: num(&rec[0])?,
            alpha: num(&rec[1])?,
            n: rec[2].parse().map_err(|e| ExperimentError::Config(format!("n: {e}")))?,
            metrics,
        });
    }
    Ok(rows)
}

impl SummaryRow {
    pub fn from_summary(s: &ConditionSummary) -> Self {
        Self {
            road_length: s.condition.road_length,
            alpha: s.condition.alpha,
            n: s.n,
            metrics: [
                s.human.failure_rate,
                s.robot.failure_rate,
                s.human.merge_time_mean,
                s.human.merge_time_se,
                s.robot.merge_time_mean,
                s.robot.merge_time_se,
                s.human.reward_mean,
                s.robot.reward_mean,
                s.human.oscillation_mean,
                s.robot.oscillation_mean,
            ],
        }
    }
}

/// Writes `logs/<condition>_t<index>.jsonl` per trial and `summary.csv`.
pub fn write_batch(result: &BatchResult, out_dir: &Path) -> Result<(), ExperimentError> {
    let logs = out_dir.join("logs");
    std::fs::create_dir_all(&logs)?;
    for t in &result.trials {
        t.log.save(&logs.join(format!("{}_t{:04}.jsonl", t.condition.id(), t.trial_index)))?;
    }
    std::fs::write(out_dir.join("summary.csv"), export_summaries(&result.summaries)?)?;
    Ok(())
}

/// Per-trial metric extracted from a log for statistical comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MergeTime,
    Reward,
    Oscillation,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merge_time" => Ok(Metric::MergeTime),
            "reward" => Ok(Metric::Reward),
            "oscillation" => Ok(Metric::Oscillation),
            _ => Err(format!("unknown metric {s:?}")),
        }
    }
}

/// The metric for one trial; `None` for merge time of a failed merge.
pub fn trial_metric(log: &TrialLog, metric: Metric, side: Side) -> Option<f64> {
    match metric {
        Metric::MergeTime => sim::compute_merge_time(log, side),
        Metric::Reward => {
            let o = sim::compute_outcome(log);
            Some(match side {
                Side::Human => o.total_r_h,
                Side::Robot => o.total_r_r,
            })
        }
        Metric::Oscillation => Some(oscillation_count(log, side) as f64),
    }
}
