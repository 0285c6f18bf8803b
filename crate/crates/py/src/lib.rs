//! Python module `comerge`: world model, planner, trials, batches and tests.
//!
//! Structured results (plans, outcomes, summaries) cross over as plain dicts.

use comerge::experiments::{self, Condition, ConditionGrid};
use comerge::model::{self, Action, JointAction};
use comerge::planner::{self, ActionSpace, PlannerConfig};
use comerge::sim::{self, HumanModel};
use comerge::stats;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn action(name: &str) -> PyResult<Action> {
    name.parse().map_err(value_err)
}

#[pyclass(name = "CarState", module = "comerge", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyCarState(model::CarState);

#[pymethods]
impl PyCarState {
    #[new]
    fn new(y: f64, x: f64, v: f64) -> Self {
        Self(model::CarState::new(y, x, v))
    }
    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }
    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }
    #[getter]
    fn v(&self) -> f64 {
        self.0.v
    }
    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
    fn __repr__(&self) -> String {
        format!("CarState(y={}, x={}, v={})", self.0.y, self.0.x, self.0.v)
    }
}

#[pyclass(name = "WorldState", module = "comerge", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyWorldState(model::WorldState);

#[pymethods]
impl PyWorldState {
    #[new]
    fn new(human: PyCarState, robot: PyCarState) -> Self {
        Self(model::WorldState::new(human.0, robot.0))
    }
    #[getter]
    fn human(&self) -> PyCarState {
        PyCarState(self.0.human)
    }
    #[getter]
    fn robot(&self) -> PyCarState {
        PyCarState(self.0.robot)
    }
    #[getter]
    fn step(&self) -> u64 {
        self.0.step
    }
    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }
    fn __repr__(&self) -> String {
        format!("WorldState(human={:?}, robot={:?}, step={})", self.0.human, self.0.robot, self.0.step)
    }
}

/// Road, physics and car geometry with the default double-merge layout.
#[pyclass(name = "World", module = "comerge", from_py_object)]
#[derive(Clone, Copy)]
pub struct PyWorld(model::World);

#[pymethods]
impl PyWorld {
    #[new]
    #[pyo3(signature = (road_length = 200.0))]
    fn new(road_length: f64) -> PyResult<Self> {
        let mut w = model::World::default();
        w.road.road_length = road_length;
        w.validate().map_err(value_err)?;
        Ok(Self(w))
    }
    #[getter]
    fn road_length(&self) -> f64 {
        self.0.road.road_length
    }
    fn lane_center(&self, lane: u8) -> f64 {
        self.0.road.lane_center(lane)
    }
    /// One tick; raises if an action is not allowed at the car's position.
    fn transition(&self, s: PyWorldState, human: &str, robot: &str) -> PyResult<PyWorldState> {
        let u = JointAction::new(action(human)?, action(robot)?);
        model::transition(&s.0, u, &self.0).map(PyWorldState).map_err(value_err)
    }
    /// One tick with disallowed turns replaced by "stay".
    fn sanitized_transition(&self, s: PyWorldState, human: &str, robot: &str) -> PyResult<PyWorldState> {
        let u = JointAction::new(action(human)?, action(robot)?);
        Ok(PyWorldState(model::sanitized_transition(&s.0, u, &self.0)))
    }
    fn allowed_actions(&self, car: PyCarState) -> Vec<&'static str> {
        model::allowed_actions(&car.0, &self.0).into_iter().map(Action::as_str).collect()
    }
    /// `(r_h, r_r)`.
    fn rewards(&self, s: PyWorldState) -> (f64, f64) {
        model::rewards(&s.0, &self.0)
    }
    fn collision(&self, s: PyWorldState) -> bool {
        model::check_collision(&s.0, &self.0.geometry)
    }
    fn is_terminal(&self, s: PyWorldState) -> bool {
        model::is_terminal(&s.0, &self.0)
    }
}

/// Best-first joint plan from `state`. Returns a dict with `actions` as
/// `[human, robot]` pairs, `value`, `complete` and search statistics.
#[pyfunction]
#[pyo3(signature = (state, world, alpha = 0.5, max_expansions = Some(2000), time_budget = 30.0, seed = 0))]
fn plan<'py>(
    py: Python<'py>,
    state: PyWorldState,
    world: PyWorld,
    alpha: f64,
    max_expansions: Option<u64>,
    time_budget: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = PlannerConfig { max_expansions, time_budget, rng_seed: seed, ..PlannerConfig::default() }.with_alpha(alpha);
    cfg.validate(&world.0).map_err(value_err)?;
    let out = py.detach(|| planner::search(&state.0, &cfg, &world.0, &ActionSpace::joint()));
    let d = PyDict::new(py);
    let actions: Vec<(&str, &str)> = out.plan.actions.iter().map(|u| (u.human.as_str(), u.robot.as_str())).collect();
    d.set_item("actions", actions)?;
    d.set_item("value", out.plan.value)?;
    d.set_item("complete", out.plan.complete)?;
    d.set_item("human_reward", out.plan.human_reward)?;
    d.set_item("robot_reward", out.plan.robot_reward)?;
    d.set_item("stats", to_py(py, &out.stats)?)?;
    Ok(d)
}

/// A recorded trial.
#[pyclass(name = "TrialLog", module = "comerge")]
pub struct PyTrialLog(sim::TrialLog);

#[pymethods]
impl PyTrialLog {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        sim::TrialLog::read_jsonl(text.as_bytes()).map(Self).map_err(value_err)
    }
    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        sim::TrialLog::load(&path).map(Self).map_err(value_err)
    }
    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(value_err)
    }
    fn to_jsonl(&self) -> String {
        self.0.to_jsonl()
    }
    fn __len__(&self) -> usize {
        self.0.records.len()
    }
    #[getter]
    fn aborted(&self) -> Option<String> {
        self.0.aborted.clone()
    }
    fn header<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.header)
    }
    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.records)
    }
    fn outcome<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &sim::compute_outcome(&self.0))
    }
    /// Initial state followed by the state after every tick.
    fn states(&self) -> Vec<PyWorldState> {
        self.0.states().into_iter().map(PyWorldState).collect()
    }
    /// Re-runs the logged actions; the result equals `states()[1:]` for an intact log.
    fn replay(&self) -> PyResult<Vec<PyWorldState>> {
        sim::replay(&self.0).map(|v| v.into_iter().map(PyWorldState).collect()).map_err(value_err)
    }
    fn oscillation_count(&self, side: &str) -> PyResult<usize> {
        let side = match side {
            "human" => model::Side::Human,
            "robot" => model::Side::Robot,
            _ => return Err(value_err(format!("unknown side {side:?}"))),
        };
        Ok(experiments::oscillation_count(&self.0, side))
    }
}

/// One seeded trial drawn as in a batch: random start lanes and robot speed.
#[pyfunction]
#[pyo3(signature = (alpha, road_length = 200.0, human = "cooperative:0.5", seed = 0, max_expansions = Some(2000)))]
fn simulate(py: Python<'_>, alpha: f64, road_length: f64, human: &str, seed: u64, max_expansions: Option<u64>) -> PyResult<PyTrialLog> {
    let human: HumanModel = human.parse().map_err(value_err)?;
    let mut grid = ConditionGrid::default();
    grid.planner.max_expansions = max_expansions;
    let condition = Condition { road_length, alpha };
    let cfg = experiments::sample_trial(&condition, &grid, human, seed, &mut ChaCha8Rng::seed_from_u64(seed));
    let (_, log) = py.detach(|| sim::simulate(&cfg)).map_err(value_err)?;
    Ok(PyTrialLog(log))
}

/// Runs a condition grid and returns `(summary_csv, summaries)`. `grid` takes
/// the same keys as the JSON grid file.
#[pyfunction]
#[pyo3(signature = (grid = None, human = "cooperative:0.5", out_dir = None))]
fn run_batch<'py>(
    py: Python<'py>,
    grid: Option<&str>,
    human: &str,
    out_dir: Option<std::path::PathBuf>,
) -> PyResult<(String, Bound<'py, PyAny>)> {
    let grid: ConditionGrid = match grid {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => ConditionGrid::default(),
    };
    let human: HumanModel = human.parse().map_err(value_err)?;
    let batch = py.detach(|| experiments::run_batch(&grid, human)).map_err(value_err)?;
    if let Some(dir) = out_dir {
        experiments::write_batch(&batch, &dir).map_err(value_err)?;
    }
    let csv = experiments::export_summaries(&batch.summaries).map_err(value_err)?;
    Ok((csv, to_py(py, &batch.summaries)?))
}

/// Pooled-variance two-sample t-test: `(t, df, p)` with a two-sided p.
#[pyfunction]
fn t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::student_t_test(&a, &b).map_err(value_err)?;
    Ok((r.t, r.df, r.p))
}

/// One-way ANOVA: `(F, df_between, df_within)`.
#[pyfunction]
fn anova(groups: Vec<Vec<f64>>) -> PyResult<(f64, usize, usize)> {
    let r = stats::one_way_anova(&groups).map_err(value_err)?;
    Ok((r.f, r.df_between, r.df_within))
}

#[pymodule(name = "comerge")]
fn comerge_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCarState>()?;
    m.add_class::<PyWorldState>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyTrialLog>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(anova, m)?)?;
    m.add("ACTIONS", Action::ALL.map(Action::as_str).to_vec())?;
    Ok(())
}
