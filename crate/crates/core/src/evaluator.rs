//! Candidate scoring: four raw metrics, min-max normalization over the
//! feasible set and a weighted sum.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, EvState};
use crate::error::{PtoError, Result};
use crate::planner::CandidateTrajectory;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalWeights<T> {
    /// Weights of goal, lateral, comfort and consistency, in that order.
    pub w: [T; 4],
    /// Length of the undiscounted prefix.
    pub n_c: usize,
    pub gamma_g: T,
    pub gamma_l: T,
    pub gamma_c: T,
    /// Goal cruise speed (m/s).
    pub v_goal: T,
}

impl<T: Scalar> EvalWeights<T> {
    pub fn standard() -> Self {
        EvalWeights {
            w: [T::lit(2500.0), T::lit(150.0), T::lit(100.0), T::lit(100.0)],
            n_c: 10,
            gamma_g: T::lit(40.0),
            gamma_l: T::lit(40.0),
            gamma_c: T::lit(40.0),
            v_goal: T::lit(15.0),
        }
    }

    pub fn check(&self, horizon: usize) -> Result<()> {
        if self.n_c < 1 || self.n_c > horizon {
            return Err(PtoError::InvalidConfig(format!("n_c must lie in [1, {horizon}]")));
        }
        if !self.w.iter().all(|w| *w >= T::zero() && w.is_finite()) {
            return Err(PtoError::InvalidConfig("metric weights must be nonnegative".into()));
        }
        if !([self.gamma_g, self.gamma_l, self.gamma_c].iter().all(|g| *g > T::zero())) {
            return Err(PtoError::InvalidConfig("metric discounts must be positive".into()));
        }
        if !(self.v_goal > T::zero()) {
            return Err(PtoError::InvalidConfig("goal speed must be positive".into()));
        }
        Ok(())
    }
}

/// Sum of `terms` (indexed from 1) with full weight before `n_c` and weight
/// `exp(-(i - n_c) / gamma)` from `n_c` on.
pub fn discounted_sum<T: Scalar>(terms: impl IntoIterator<Item = T>, n_c: usize, gamma: T) -> T {
    terms.into_iter().enumerate().fold(T::zero(), |acc, (j, e)| {
        let i = j + 1;
        let w = if i < n_c { T::one() } else { (-T::lit((i - n_c) as f64) / gamma).exp() };
        acc + w * e
    })
}

/// Discounted squared speed error over states `1..=N`.
pub fn metric_goal<T: Scalar>(states: &[EvState<T>], ew: &EvalWeights<T>) -> T {
    let terms = states.iter().skip(1).map(|x| (x.v - ew.v_goal).powi(2));
    discounted_sum(terms, ew.n_c, ew.gamma_g)
}

/// Discounted squared offset from the candidate lane center `y_c`.
pub fn metric_lateral<T: Scalar>(states: &[EvState<T>], y_c: T, ew: &EvalWeights<T>) -> T {
    let terms = states.iter().skip(1).map(|x| (x.py - y_c).powi(2));
    discounted_sum(terms, ew.n_c, ew.gamma_l)
}

/// Discounted squared jerk of the planned acceleration sequence.
pub fn metric_comfort<T: Scalar>(controls: &[ControlInput<T>], ew: &EvalWeights<T>, ts: T) -> T {
    let terms = controls.windows(2).map(|p| ((p[1].a - p[0].a) / ts).powi(2));
    discounted_sum(terms, ew.n_c, ew.gamma_c)
}

/// Squared change of the target lateral position.
pub fn metric_consistency<T: Scalar>(target_y: T, prev_target_y: T) -> T {
    (target_y - prev_target_y).powi(2)
}

/// Min-max normalization; an all-equal list maps to zeros.
pub fn normalize<T: Scalar>(raw: &[T]) -> Vec<T> {
    let lo = raw.iter().copied().fold(T::infinity(), T::min);
    let hi = raw.iter().copied().fold(T::neg_infinity(), T::max);
    let span = hi - lo;
    raw.iter()
        .map(|c| if span > T::zero() { ((*c - lo) / span).max(T::zero()).min(T::one()) } else { T::zero() })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<T> {
    pub id: usize,
    pub lane: usize,
    /// Raw `[C_g, C_l, C_c, C_m]`.
    pub raw: [T; 4],
    /// Normalized `[F_g, F_l, F_c, F_m]`.
    pub normalized: [T; 4],
    pub score: T,
}

/// Raw metrics of one candidate.
pub fn raw_metrics<T: Scalar>(c: &CandidateTrajectory<T>, ew: &EvalWeights<T>, ts: T, prev_target_y: T) -> [T; 4] {
    let v = &c.solution.vars;
    [
        metric_goal(&v.states, ew),
        metric_lateral(&v.states, c.spec.lateral, ew),
        metric_comfort(&v.controls, ew, ts),
        metric_consistency(c.spec.lateral, prev_target_y),
    ]
}

/// Normalizes each metric column and forms `s = wᵀF`.
pub fn score<T: Scalar>(entries: &[(usize, usize, [T; 4])], ew: &EvalWeights<T>) -> Vec<ScoredCandidate<T>> {
    let cols: Vec<Vec<T>> = (0..4).map(|m| normalize(&entries.iter().map(|e| e.2[m]).collect::<Vec<_>>())).collect();
    entries
        .iter()
        .enumerate()
        .map(|(j, &(id, lane, raw))| {
            let normalized = [cols[0][j], cols[1][j], cols[2][j], cols[3][j]];
            let score = (0..4).fold(T::zero(), |acc, m| acc + ew.w[m] * normalized[m]);
            ScoredCandidate { id, lane, raw, normalized, score }
        })
        .collect()
}

/// Index of the winner: lowest score, then `prev_lane`, then lowest id.
pub fn pick<T: Scalar>(scored: &[ScoredCandidate<T>], prev_lane: usize) -> Option<usize> {
    let key = |s: &ScoredCandidate<T>| (s.lane != prev_lane, s.id);
    let mut best: Option<usize> = None;
    for (j, s) in scored.iter().enumerate() {
        best = match best {
            None => Some(j),
            Some(b) => {
                let cur = &scored[b];
                if s.score < cur.score || (s.score == cur.score && key(s) < key(cur)) {
                    Some(j)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection<T> {
    /// Position of the winner in the candidate list.
    pub index: usize,
    pub lane: usize,
    /// Scores of the feasible candidates, in candidate order.
    pub scored: Vec<ScoredCandidate<T>>,
}

/// Scores the feasible candidates and returns the best one.
pub fn select<T: Scalar>(
    cands: &[CandidateTrajectory<T>],
    ew: &EvalWeights<T>,
    ts: T,
    prev_lane: usize,
    prev_target_y: T,
) -> Result<Selection<T>> {
    let feasible: Vec<usize> = (0..cands.len()).filter(|&j| cands[j].feasible).collect();
    let entries: Vec<_> = feasible
        .iter()
        .map(|&j| (cands[j].spec.id, cands[j].spec.lane, raw_metrics(&cands[j], ew, ts, prev_target_y)))
        .collect();
    let scored = score(&entries, ew);
    let best = pick(&scored, prev_lane).ok_or(PtoError::NoFeasibleCandidate)?;
    Ok(Selection { index: feasible[best], lane: scored[best].lane, scored })
}
