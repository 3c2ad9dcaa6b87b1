use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pto_core::harness::{compute_metrics, export, load_scenario, read_log, run_closed_loop};
use pto_core::nlp::SolveMode;
use pto_core::planner::PlannerMode;
use pto_core::PtoError;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "pto", version, about = "Parallel trajectory optimization in simulated traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario in closed loop and write the run artifacts.
    Run {
        /// Scenario file, or the name of a bundled scenario such as `paper_s4`.
        #[arg(long)]
        scenario: PathBuf,
        /// Candidate layout: pto1, pto3 or pto6. Defaults to the scenario's.
        #[arg(long)]
        planner: Option<PlannerMode>,
        /// Simulated time in seconds. Defaults to the scenario's.
        #[arg(long)]
        duration: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Iterate every solve to convergence instead of real-time iterations.
        #[arg(long)]
        converge: bool,
    },
    /// Recompute the summary of a previous run from its log.
    Metrics {
        /// Directory holding `log.csv`.
        #[arg(long)]
        log: PathBuf,
        /// Goal cruise speed (m/s).
        #[arg(long, default_value_t = 15.0)]
        v_goal: f64,
    },
}

fn fail(code: u8, e: PtoError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run { scenario, planner, duration, out, converge } => {
            let mut cfg = match load_scenario(&scenario) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_VALIDATION, e),
            };
            if let Some(mode) = planner {
                cfg.planner.mode = mode;
            }
            if let Some(d) = duration {
                if !(d > 0.0 && d.is_finite()) {
                    return fail(EXIT_VALIDATION, PtoError::Validation("duration must be positive".into()));
                }
                cfg.scenario.duration = d;
            }
            if converge {
                cfg.planner.solve_mode = SolveMode::Converge;
            }
            if let Err(e) = cfg.planner.check(&cfg.scenario.lanes) {
                return fail(EXIT_VALIDATION, e);
            }
            let log = match run_closed_loop(&cfg.scenario, &cfg.planner) {
                Ok(l) => l,
                Err(e) => return fail(EXIT_RUNTIME, e),
            };
            let summary = compute_metrics(&log, cfg.planner.eval.v_goal);
            if let Err(e) = export(&log, &summary, &out) {
                return fail(EXIT_RUNTIME, e);
            }
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Command::Metrics { log, v_goal } => match read_log(&log) {
            Ok(l) if !l.records.is_empty() => {
                println!("{}", serde_json::to_string_pretty(&compute_metrics(&l, v_goal)).unwrap_or_default());
                ExitCode::SUCCESS
            }
            Ok(_) => fail(EXIT_VALIDATION, PtoError::Validation("log is empty".into())),
            Err(e) => fail(EXIT_VALIDATION, e),
        },
    }
}
