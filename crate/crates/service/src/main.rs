use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use comerge::experiments::{ConditionGrid, Metric};
use comerge::model::Side;
use comerge::sim::{HumanModel, TrialLog};
use comerge_service::commands::{self, Selector};
use comerge_service::server;
use comerge_service::session::SessionPlan;

#[derive(Parser)]
#[command(name = "comerge", version, about = "Collaborative lane-merge planner: batches, statistics and the study server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Human,
    Robot,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Self {
        match s {
            SideArg::Human => Side::Human,
            SideArg::Robot => Side::Robot,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulated trials and write logs plus summary.csv.
    Experiment {
        /// Condition grid as JSON; the full default grid when omitted.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// cooperative:<alpha_h>, selfish or constant.
        #[arg(long, default_value = "cooperative:0.5")]
        human: HumanModel,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Student's t-test of a metric between two groups of logged trials.
    Stats {
        /// merge_time, reward or oscillation.
        #[arg(long)]
        metric: Metric,
        #[arg(long, value_enum)]
        side: SideArg,
        /// Group selector such as alpha=0.6 or alpha=0.6,road_length=200.
        #[arg(long)]
        a: Selector,
        #[arg(long)]
        b: Selector,
        /// Experiment output directory or a directory of logs.
        dir: PathBuf,
    },
    /// Serve study sessions over web sockets.
    Serve {
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Recorded trials per session.
        #[arg(long, default_value_t = 18)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        practice: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "sessions")]
        out_dir: PathBuf,
        /// Condition grid as JSON; its planner settings are used for the robot.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        tick_ms: u64,
        #[arg(long, default_value_t = 60)]
        questionnaire_timeout_s: u64,
    },
    /// Run one headless trial and write its log.
    Simulate {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 200.0)]
        road_length: f64,
        #[arg(long, default_value = "cooperative:0.5")]
        human: HumanModel,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read a trial log and re-run its actions.
    Replay {
        file: PathBuf,
        /// Fail unless every replayed state equals the logged one.
        #[arg(long)]
        check: bool,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Experiment { grid, human, trials, seed, out_dir } => {
            let batch = commands::experiment(grid.as_deref(), human, trials, seed, &out_dir)?;
            eprintln!("{} trials in {} conditions written to {}", batch.trials.len(), batch.summaries.len(), out_dir.display());
        }
        Command::Stats { metric, side, a, b, dir } => {
            let logs = commands::load_logs(&dir)?;
            let t = commands::compare(&logs, metric, side.into(), &a, &b)?;
            println!("{}", commands::ttest_json(&t));
        }
        Command::Serve { port, host, trials, practice, seed, out_dir, grid, tick_ms, questionnaire_timeout_s } => {
            let mut plan = SessionPlan {
                practice_trials: practice,
                recorded_trials: trials,
                seed,
                tick_period: Duration::from_millis(tick_ms),
                questionnaire_timeout: Duration::from_secs(questionnaire_timeout_s),
                ..SessionPlan::default()
            };
            if let Some(p) = grid {
                plan.grid = ConditionGrid::load(&p).map_err(|e| e.to_string())?;
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(async {
                let (addr, task) = server::spawn(&format!("{host}:{port}"), plan, out_dir).await.map_err(|e| e.to_string())?;
                eprintln!("listening on ws://{addr}");
                task.await.map_err(|e| e.to_string())?.map_err(|e| e.to_string())
            })?;
        }
        Command::Simulate { alpha, road_length, human, seed, out } => {
            let log = commands::simulate(alpha, road_length, human, seed)?;
            log.save(&out).map_err(|e| e.to_string())?;
            let o = comerge::sim::compute_outcome(&log);
            println!("{}", serde_json::to_string(&o).expect("outcome serializes"));
        }
        Command::Replay { file, check } => {
            let log = TrialLog::load(&file).map_err(|e| e.to_string())?;
            if check {
                let n = commands::replay_check(&log)?;
                println!("ok: {n} ticks replay exactly");
            } else {
                for s in comerge::sim::replay(&log).map_err(|e| e.to_string())? {
                    println!("{}", serde_json::to_string(&s).expect("state serializes"));
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
