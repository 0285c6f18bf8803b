//! Offline subcommands of the `comerge` binary.

use std::path::{Path, PathBuf};

use comerge::experiments::{self, Condition, ConditionGrid, Metric};
use comerge::model::Side;
use comerge::sim::{self, HumanModel, TrialConfig, TrialLog};
use comerge::stats::{self, TTest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type CmdResult<T> = Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Runs a batch and writes `logs/` and `summary.csv` under `out_dir`.
/// `trials` and `seed` override the grid file when given.
pub fn experiment(
    grid_path: Option<&Path>,
    human: HumanModel,
    trials: Option<usize>,
    seed: Option<u64>,
    out_dir: &Path,
) -> CmdResult<experiments::BatchResult> {
    let mut grid = match grid_path {
        Some(p) => ConditionGrid::load(p).map_err(err)?,
        None => ConditionGrid::default(),
    };
    if let Some(n) = trials {
        grid.trials_per_condition = n;
    }
    if let Some(s) = seed {
        grid.base_seed = s;
    }
    let batch = experiments::run_batch(&grid, human).map_err(err)?;
    experiments::write_batch(&batch, out_dir).map_err(err)?;
    Ok(batch)
}

/// A `key=value` selector over trial logs, with keys `alpha` and `road_length`
/// joined by commas.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selector {
    pub alpha: Option<f64>,
    pub road_length: Option<f64>,
}

impl std::str::FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut sel = Selector::default();
        for part in s.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("not a number: {v:?}"))?;
            match k.trim() {
                "alpha" => sel.alpha = Some(v),
                "road_length" => sel.road_length = Some(v),
                other => return Err(format!("unknown selector key {other:?}")),
            }
        }
        Ok(sel)
    }
}

impl Selector {
    pub fn matches(&self, cfg: &TrialConfig) -> bool {
        let close = |want: Option<f64>, got: f64| want.is_none_or(|w| (w - got).abs() < 1e-9);
        close(self.alpha, cfg.planner.alpha) && close(self.road_length, cfg.road.road_length)
    }
}

/// Every trial log under `dir/logs` (or `dir` itself), sorted by file name.
pub fn load_logs(dir: &Path) -> CmdResult<Vec<TrialLog>> {
    let logs_dir = if dir.join("logs").is_dir() { dir.join("logs") } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&logs_dir)
        .map_err(|e| format!("{}: {e}", logs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| TrialLog::load(p).map_err(|e| format!("{}: {e}", p.display()))).collect()
}

/// Student's t-test of one metric between two selections of completed trials.
pub fn compare(logs: &[TrialLog], metric: Metric, side: Side, a: &Selector, b: &Selector) -> CmdResult<TTest> {
    let sample = |sel: &Selector| -> Vec<f64> {
        logs.iter()
            .filter(|l| l.aborted.is_none() && sel.matches(&l.header))
            .filter_map(|l| experiments::trial_metric(l, metric, side))
            .collect()
    };
    stats::student_t_test(&sample(a), &sample(b)).map_err(err)
}

pub fn ttest_json(t: &TTest) -> String {
    serde_json::json!({ "t": t.t, "df": t.df, "p": t.p }).to_string()
}

/// One headless trial drawn like a batch trial of the given condition.
pub fn simulate(alpha: f64, road_length: f64, human: HumanModel, seed: u64) -> CmdResult<TrialLog> {
    let grid = ConditionGrid::default();
    let condition = Condition { road_length, alpha };
    let cfg = experiments::sample_trial(&condition, &grid, human, seed, &mut ChaCha8Rng::seed_from_u64(seed));
    let (_, log) = sim::simulate(&cfg).map_err(err)?;
    Ok(log)
}

/// Replays a log and checks it against the recorded states.
pub fn replay_check(log: &TrialLog) -> CmdResult<usize> {
    let replayed = sim::replay(log).map_err(err)?;
    let recorded = log.states();
    match replayed.iter().zip(&recorded[1..]).position(|(a, b)| a != b) {
        Some(i) => Err(format!("tick {i}: replayed state differs from the log")),
        None => Ok(replayed.len()),
    }
}
