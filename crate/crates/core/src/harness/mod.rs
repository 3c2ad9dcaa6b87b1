//! Closed-loop simulation, run metrics, scenario files and run artifacts.

mod closed_loop;
mod export;
mod metrics;
mod scenario;

pub use closed_loop::{run_closed_loop, CandidateRecord, CycleRecord, RunLog};
pub use export::{
    export, read_log, read_summary, write_candidates, write_log_csv, write_summary, write_timing_csv, CANDIDATES_FILE,
    LOG_COLUMNS, LOG_FILE, SUMMARY_FILE, TIMING_FILE,
};
pub use metrics::{compute_metrics, reversal_cycles, Summary};
pub use scenario::{load_scenario, parse_scenario, ScenarioConfig, BUNDLED, PAPER_S4};
