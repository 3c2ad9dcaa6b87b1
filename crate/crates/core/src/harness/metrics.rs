//! Run-level performance summary.

use serde::{Deserialize, Serialize};

use super::closed_loop::RunLog;

/// Aggregate driving performance of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cycles: usize,
    /// Mean of `|v - v_g|` (m/s).
    pub e_mean: f64,
    /// Max of `|v - v_g|` (m/s).
    pub e_max: f64,
    /// Smallest barrier value against any perceived SV; `None` if no SV
    /// was ever perceived.
    pub s_min: Option<f64>,
    /// Percentage of cycles that executed a candidate which passed the
    /// safety pre-check.
    pub p_safe: f64,
    /// Mean per-cycle planning time (s).
    pub t_solve: f64,
    /// Mean `|a|` of the executed controls (m/s²).
    pub a_mean: f64,
    /// Longitudinal distance covered (m).
    pub l_long: f64,
    /// Percentage of cycles not closing an A→B→A target-lane reversal
    /// within one second.
    pub p_lc: f64,
}

/// Cycles at which the target lane returns to a lane it left less than
/// `window` cycles earlier.
pub fn reversal_cycles(lanes: &[usize], window: usize) -> Vec<usize> {
    let changes: Vec<usize> = (1..lanes.len()).filter(|&k| lanes[k] != lanes[k - 1]).collect();
    changes
        .iter()
        .filter(|&&k| changes.iter().any(|&j| j < k && k - j <= window && lanes[j - 1] == lanes[k]))
        .copied()
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Computes the summary of a non-empty log.
pub fn compute_metrics(log: &RunLog, v_goal: f64) -> Summary {
    let r = &log.records;
    let n = r.len().max(1) as f64;
    let errs = || r.iter().map(|c| (c.state.v - v_goal).abs());
    let window = (1.0 / log.period).round().max(1.0) as usize;
    let lanes: Vec<usize> = r.iter().map(|c| c.target_lane).collect();
    let reversals = reversal_cycles(&lanes, window).len() as f64;
    Summary {
        cycles: r.len(),
        e_mean: mean(errs()),
        e_max: errs().fold(0.0, f64::max),
        s_min: r.iter().filter_map(|c| c.min_barrier()).reduce(f64::min),
        p_safe: 100.0 * r.iter().filter(|c| !c.fallback).count() as f64 / n,
        t_solve: mean(r.iter().map(|c| c.solve_time)),
        a_mean: mean(r.iter().map(|c| c.control.a.abs())),
        l_long: match (r.first(), r.last()) {
            (Some(a), Some(b)) => (b.px_end - a.state.px).max(0.0),
            _ => 0.0,
        },
        p_lc: 100.0 * (1.0 - reversals / n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reversals() {
        assert!(reversal_cycles(&[1; 30], 10).is_empty());
        assert_eq!(reversal_cycles(&[1, 1, 0, 0, 1, 1], 10), vec![4]);
        assert!(reversal_cycles(&[1, 0, 0, 0, 0, 1], 3).is_empty());
        assert!(reversal_cycles(&[1, 1, 0, 0, 2, 2], 10).is_empty());
        assert_eq!(reversal_cycles(&[1, 0, 2, 1], 10), vec![3]);
    }
}
