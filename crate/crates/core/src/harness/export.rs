//! Run artifacts: `log.csv`, `timing.csv`, `summary.json` and
//! `candidates.jsonl`.
//!
//! `log.csv` and `candidates.jsonl` hold no wall-clock data, so repeated
//! runs produce identical bytes. Solve times go to `timing.csv`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{ControlInput, EvState};
use crate::error::{PtoError, Result};
use crate::planner::PlannerMode;

use super::closed_loop::{CandidateRecord, CycleRecord, RunLog};
use super::metrics::Summary;

pub const LOG_FILE: &str = "log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";

/// Fixed leading columns of `log.csv`; `h_sv<i>` and `id_sv<i>` follow for
/// each perception slot.
pub const LOG_COLUMNS: [&str; 17] = [
    "cycle",
    "time",
    "planner",
    "px",
    "py",
    "theta",
    "v",
    "omega",
    "a",
    "omega_dot",
    "steer",
    "target_lane",
    "target_y",
    "candidate",
    "fallback",
    "min_barrier",
    "px_end",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn slots(log: &RunLog) -> usize {
    log.records.iter().map(|r| r.barriers.len()).max().unwrap_or(0)
}

pub fn write_log_csv(log: &RunLog, path: &Path) -> Result<()> {
    let m = slots(log);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = LOG_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=m).map(|i| format!("h_sv{i}")));
    header.extend((1..=m).map(|i| format!("id_sv{i}")));
    w.write_record(&header)?;
    for r in &log.records {
        let s = &r.state;
        let mut row = vec![
            r.cycle.to_string(),
            r.time.to_string(),
            log.mode.to_string(),
            s.px.to_string(),
            s.py.to_string(),
            s.theta.to_string(),
            s.v.to_string(),
            s.omega.to_string(),
            r.control.a.to_string(),
            r.control.omega_dot.to_string(),
            r.steer.to_string(),
            r.target_lane.to_string(),
            r.target_y.to_string(),
            opt(r.candidate),
            r.fallback.to_string(),
            opt(r.min_barrier()),
            r.px_end.to_string(),
        ];
        row.extend((0..m).map(|i| opt(r.barriers.get(i))));
        row.extend((0..m).map(|i| opt(r.perceived.get(i))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing_csv(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cycle", "solve_time"])?;
    for r in &log.records {
        w.write_record([r.cycle.to_string(), r.solve_time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CandidateLine<'a> {
    cycle: usize,
    time: f64,
    #[serde(flatten)]
    candidate: &'a CandidateRecord,
}

pub fn write_candidates(log: &RunLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &log.records {
        for c in &r.candidates {
            serde_json::to_writer(&mut w, &CandidateLine { cycle: r.cycle, time: r.time, candidate: c })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes all artifacts into `dir`, creating it if needed.
pub fn export(log: &RunLog, summary: &Summary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_log_csv(log, &dir.join(LOG_FILE))?;
    write_timing_csv(log, &dir.join(TIMING_FILE))?;
    write_candidates(log, &dir.join(CANDIDATES_FILE))?;
    write_summary(summary, &dir.join(SUMMARY_FILE))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<T>> {
    let raw = rec.get(i).ok_or_else(|| PtoError::Parse(format!("missing column {name}")))?;
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|_| PtoError::Parse(format!("bad value `{raw}` in column {name}")))
}

fn req<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    field(rec, i, name)?.ok_or_else(|| PtoError::Parse(format!("empty column {name}")))
}

/// Reads `log.csv` (and `timing.csv` when present) back into a log without
/// candidate detail.
pub fn read_log(dir: &Path) -> Result<RunLog> {
    let mut rd = csv::Reader::from_path(dir.join(LOG_FILE))?;
    let header = rd.headers()?.clone();
    if header.len() < LOG_COLUMNS.len() || header.iter().zip(LOG_COLUMNS).any(|(a, b)| a != b) {
        return Err(PtoError::Parse(format!("{LOG_FILE}: unexpected header")));
    }
    let m = (header.len() - LOG_COLUMNS.len()) / 2;
    let base = LOG_COLUMNS.len();
    let mut records = Vec::new();
    let mut mode = PlannerMode::Pto3;
    for row in rd.records() {
        let row = row?;
        let col = |name: &str| LOG_COLUMNS.iter().position(|c| *c == name).unwrap_or(usize::MAX);
        let f = |name: &str| req::<f64>(&row, col(name), name);
        mode = row.get(col("planner")).unwrap_or_default().parse()?;
        let mut barriers = Vec::new();
        let mut perceived = Vec::new();
        for i in 0..m {
            if let Some(h) = field::<f64>(&row, base + i, "h_sv")? {
                barriers.push(h);
            }
            if let Some(id) = field::<usize>(&row, base + m + i, "id_sv")? {
                perceived.push(id);
            }
        }
        let candidate = field::<usize>(&row, col("candidate"), "candidate")?;
        records.push(CycleRecord {
            cycle: req(&row, col("cycle"), "cycle")?,
            time: f("time")?,
            state: EvState { px: f("px")?, py: f("py")?, theta: f("theta")?, v: f("v")?, omega: f("omega")? },
            control: ControlInput { a: f("a")?, omega_dot: f("omega_dot")? },
            steer: f("steer")?,
            target_lane: req(&row, col("target_lane"), "target_lane")?,
            target_y: f("target_y")?,
            candidate,
            fallback: req(&row, col("fallback"), "fallback")?,
            perceived,
            barriers,
            px_end: f("px_end")?,
            candidates: Vec::new(),
            solve_time: 0.0,
        });
    }

    let timing = dir.join(TIMING_FILE);
    if timing.exists() {
        let mut rd = csv::Reader::from_path(timing)?;
        for row in rd.records() {
            let row = row?;
            let cycle: usize = req(&row, 0, "cycle")?;
            let t: f64 = req(&row, 1, "solve_time")?;
            if let Some(r) = records.iter_mut().find(|r| r.cycle == cycle) {
                r.solve_time = t;
            }
        }
    }
    let period = match records.as_slice() {
        [a, b, ..] => b.time - a.time,
        _ => 0.1,
    };
    Ok(RunLog { mode, period, records, dominance_violations: 0 })
}
