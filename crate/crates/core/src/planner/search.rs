//! Anytime best-first search over joint action sequences.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::hash_map::Entry;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::{heuristic, macro_step_n, Plan, PlannerConfig, Quantization};
use crate::model::{self, Action, JointAction, World, WorldState};

/// Slack on reward comparisons, absorbing rounding in `g + h`.
const VALUE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchNode {
    pub state: WorldState,
    pub depth: usize,
    /// Accumulated joint reward from the root.
    pub g: f64,
    /// `g` plus the optimistic remaining reward.
    pub f: f64,
    pub parent: Option<usize>,
    pub action_in: Option<JointAction>,
    pub terminal: bool,
    root_action: usize,
}

#[derive(Debug, Clone, Copy)]
struct QueueEntry {
    f: f64,
    depth: usize,
    seq: u64,
    node: usize,
}

// Max-heap on f; ties go to the deeper node, then to the earlier insertion.
impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.f
            .total_cmp(&other.f)
            .then(self.depth.cmp(&other.depth))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for QueueEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for QueueEntry {}

/// Per-side candidate actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub human: Vec<Action>,
    pub robot: Vec<Action>,
}

impl ActionSpace {
    pub fn joint() -> Self {
        Self { human: Action::ALL.to_vec(), robot: Action::ALL.to_vec() }
    }

    /// Human acts freely, robot is predicted to hold its speed.
    pub fn human_only() -> Self {
        Self { human: Action::ALL.to_vec(), robot: vec![Action::Stay] }
    }

    fn actions(&self) -> Vec<JointAction> {
        self.human
            .iter()
            .flat_map(|&h| self.robot.iter().map(move |&r| JointAction::new(h, r)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub nodes_expanded: u64,
    pub nodes_generated: u64,
    pub nodes_pruned: u64,
    pub nodes_deduplicated: u64,
    pub complete: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Root joint action of the chosen plan; `None` only for a terminal root.
    pub action: Option<JointAction>,
    pub plan: Plan,
    pub stats: SearchStats,
    /// Best leaf value after each improvement, in discovery order.
    pub incumbents: Vec<f64>,
}

type Key = [i64; 7];

fn quantize(v: f64, bin: f64) -> i64 {
    if bin > 0.0 {
        (v / bin).round() as i64
    } else {
        v.to_bits() as i64
    }
}

fn closed_key(s: &WorldState, depth: usize, q: &Quantization) -> Key {
    [
        quantize(s.human.y, q.dy),
        quantize(s.human.x, q.dx),
        quantize(s.human.v, q.dv),
        quantize(s.robot.y, q.dy),
        quantize(s.robot.x, q.dx),
        quantize(s.robot.v, q.dv),
        depth as i64,
    ]
}

struct Limits {
    deadline: Option<Instant>,
    max_expansions: Option<u64>,
}

impl Limits {
    fn new(cfg: &PlannerConfig, start: Instant) -> Self {
        let deadline = (cfg.time_budget.is_finite())
            .then(|| Duration::try_from_secs_f64(cfg.time_budget).ok())
            .flatten()
            .and_then(|d| start.checked_add(d));
        Self { deadline, max_expansions: cfg.max_expansions }
    }

    fn exceeded(&self, expanded: u64) -> bool {
        self.max_expansions.is_some_and(|m| expanded >= m)
            || self.deadline.is_some_and(|d| Instant::now() >= d)
    }
}

/// Best value seen below one root action, with the node that attains it.
#[derive(Debug, Clone, Copy)]
struct Best {
    value: f64,
    node: usize,
}

fn record(slot: &mut Option<Best>, value: f64, node: usize) {
    if slot.map_or(true, |b| value > b.value) {
        *slot = Some(Best { value, node });
    }
}

/// Runs the finite-horizon search from `root` over `space`.
///
/// The search is exact when it completes. When the wall clock or the
/// expansion cap stops it first, the generated node with the largest
/// accumulated reward is used instead.
pub fn search(root: &WorldState, cfg: &PlannerConfig, world: &World, space: &ActionSpace) -> SearchOutcome {
    SCRATCH.with_borrow_mut(|scratch| search_in(scratch, root, cfg, world, space))
}

/// Node table, open list and closed set, kept per thread between searches.
/// Growing or freeing them takes milliseconds once they are large, which
/// would land after the deadline check.
#[derive(Default)]
struct Scratch {
    nodes: Vec<SearchNode>,
    open: BinaryHeap<QueueEntry>,
    closed: FxHashMap<Key, f64>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

/// Generous expansion rate used to size the tables for a wall-clock budget.
const EXPANSIONS_PER_SECOND: f64 = 250_000.0;
const MAX_RESERVED_NODES: usize = 2_000_000;

fn expected_nodes(cfg: &PlannerConfig, branching: usize) -> usize {
    let by_time = (cfg.time_budget.is_finite()).then(|| (cfg.time_budget * EXPANSIONS_PER_SECOND) as u64);
    let expansions = match (by_time, cfg.max_expansions) {
        (Some(t), Some(m)) => t.min(m),
        (Some(n), None) | (None, Some(n)) => n,
        (None, None) => 0,
    };
    (expansions as usize).saturating_mul(branching).min(MAX_RESERVED_NODES)
}

fn search_in(scratch: &mut Scratch, root: &WorldState, cfg: &PlannerConfig, world: &World, space: &ActionSpace) -> SearchOutcome {
    let start = Instant::now();
    let limits = Limits::new(cfg, start);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let max_depth = cfg.max_depth();
    let substeps = cfg.substeps();
    let actions = space.actions();
    let mut stats = SearchStats::default();

    if max_depth == 0 || actions.is_empty() || model::is_terminal(root, world) {
        stats.complete = true;
        stats.wall_time_s = start.elapsed().as_secs_f64();
        return SearchOutcome { action: None, plan: Plan::empty(root, true), stats, incumbents: Vec::new() };
    }

    let root_f = heuristic(max_depth, substeps);
    let Scratch { nodes, open, closed } = scratch;
    nodes.clear();
    open.clear();
    closed.clear();
    let reserve = expected_nodes(cfg, actions.len());
    nodes.reserve(reserve);
    open.reserve(reserve);
    closed.reserve(reserve);
    nodes.push(SearchNode {
        state: *root,
        depth: 0,
        g: 0.0,
        f: root_f,
        parent: None,
        action_in: None,
        terminal: false,
        root_action: usize::MAX,
    });
    open.push(QueueEntry { f: root_f, depth: 0, seq: 0, node: 0 });
    let mut seq = 1u64;

    let mut r_max = f64::NEG_INFINITY;
    let mut incumbents = Vec::new();
    // Per root action: best leaf, and best node of any kind.
    let mut best_leaf: Vec<Option<Best>> = vec![None; actions.len()];
    let mut best_any: Vec<Option<Best>> = vec![None; actions.len()];
    let mut truncated = false;

    // Root children are generated in shuffled order so that equal-valued
    // root actions are reached first at random.
    let mut root_order: Vec<usize> = (0..actions.len()).collect();
    root_order.shuffle(&mut rng);
    let fixed_order: Vec<usize> = (0..actions.len()).collect();

    loop {
        // The root is always expanded so even a tiny budget yields a plan.
        if stats.nodes_expanded > 0 && limits.exceeded(stats.nodes_expanded) {
            truncated = !open.is_empty();
            break;
        }
        let Some(entry) = open.pop() else { break };
        if cfg.pruning && entry.f + VALUE_EPS < r_max {
            stats.nodes_pruned += 1 + open.len() as u64;
            break;
        }
        let parent = nodes[entry.node];
        stats.nodes_expanded += 1;
        let depth = parent.depth + 1;
        let order = if parent.depth == 0 { &root_order } else { &fixed_order };

        for &ai in order {
            let u = actions[ai];
            let mo = macro_step_n(&parent.state, u, cfg.alpha, substeps, world);
            let g = parent.g + mo.joint;
            let leaf = mo.terminal || depth == max_depth;
            let f = if leaf { g } else { g + heuristic(max_depth - depth, substeps) };
            stats.nodes_generated += 1;
            if cfg.pruning && f + VALUE_EPS < r_max {
                stats.nodes_pruned += 1;
                continue;
            }
            if !leaf {
                match closed.entry(closed_key(&mo.state, depth, &cfg.quantization)) {
                    Entry::Occupied(mut e) => {
                        if g < *e.get() {
                            stats.nodes_deduplicated += 1;
                            continue;
                        }
                        if g > *e.get() {
                            e.insert(g);
                        }
                    }
                    Entry::Vacant(e) => {
                        e.insert(g);
                    }
                }
            }
            let root_action = if parent.depth == 0 { ai } else { parent.root_action };
            let idx = nodes.len();
            nodes.push(SearchNode {
                state: mo.state,
                depth,
                g,
                f,
                parent: Some(entry.node),
                action_in: Some(u),
                terminal: mo.terminal,
                root_action,
            });
            record(&mut best_any[root_action], g, idx);
            if leaf {
                record(&mut best_leaf[root_action], g, idx);
                if g > r_max {
                    r_max = g;
                    incumbents.push(g);
                }
            } else {
                open.push(QueueEntry { f, depth, seq, node: idx });
                seq += 1;
            }
        }
    }

    let table = if truncated || r_max == f64::NEG_INFINITY { &best_any } else { &best_leaf };
    let top = table.iter().flatten().map(|b| b.value).fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<Best> = table.iter().flatten().filter(|b| b.value + VALUE_EPS >= top).copied().collect();

    stats.complete = !truncated;
    let Some(chosen) = (!ties.is_empty()).then(|| ties[rng.random_range(0..ties.len())]) else {
        stats.wall_time_s = start.elapsed().as_secs_f64();
        return SearchOutcome { action: None, plan: Plan::empty(root, stats.complete), stats, incumbents };
    };

    let mut path = Vec::new();
    let mut cursor = chosen.node;
    while let Some(u) = nodes[cursor].action_in {
        path.push(u);
        cursor = nodes[cursor].parent.expect("non-root node has a parent");
    }
    path.reverse();
    let mut plan = Plan::simulate(root, &path, cfg, world);
    plan.complete = stats.complete;
    stats.wall_time_s = start.elapsed().as_secs_f64();
    SearchOutcome { action: path.first().copied(), plan, stats, incumbents }
}

/// Plans over the full joint action space and returns the robot's first action.
///
/// Falls back to `Stay` with an empty plan when nothing can be expanded.
pub fn find_optimal_action(s: &WorldState, cfg: &PlannerConfig, world: &World) -> (Action, Plan) {
    let out = search(s, cfg, world, &ActionSpace::joint());
    let action = out.action.map_or(Action::Stay, |u| u.robot);
    (action, out.plan)
}
