//! Candidate generation, parallel solves and the next-step safety check.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::barrier_h;
use crate::dynamics::{predict_sv, ControlInput, EvState, SvState, VehicleParams};
use crate::error::{PtoError, Result};
use crate::evaluator::EvalWeights;
use crate::nlp::{initialize, solve_sqp_with, transcribe, LaneTarget, OcpSettings, Solution, SolveMode, SqpSettings};
use crate::scalar::Scalar;

/// Ordered lane centerlines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSet<T> {
    pub centerlines: Vec<T>,
    pub width: T,
}

impl<T: Scalar> LaneSet<T> {
    /// Centerlines at -2, -6 and -10 m, 4 m wide.
    pub fn three_lane() -> Self {
        LaneSet { centerlines: vec![T::lit(-2.0), T::lit(-6.0), T::lit(-10.0)], width: T::lit(4.0) }
    }

    pub fn len(&self) -> usize {
        self.centerlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centerlines.is_empty()
    }

    /// Middle lane index; the lower one for an even count.
    pub fn center_lane(&self) -> usize {
        (self.len() - 1) / 2
    }

    pub fn center(&self, lane: usize) -> T {
        self.centerlines[lane]
    }

    /// Lane whose centerline is closest to `py`; ties go to the lower index.
    pub fn nearest(&self, py: T) -> usize {
        let mut best = 0;
        for (i, y) in self.centerlines.iter().enumerate() {
            if (py - *y).abs() < (py - self.centerlines[best]).abs() {
                best = i;
            }
        }
        best
    }

    pub fn check(&self) -> Result<()> {
        if self.centerlines.is_empty() {
            return Err(PtoError::InvalidConfig("lane set is empty".into()));
        }
        if !(self.width > T::zero()) {
            return Err(PtoError::InvalidConfig("lane width must be positive".into()));
        }
        let c = &self.centerlines;
        let inc = c.windows(2).all(|w| w[1] > w[0]);
        let dec = c.windows(2).all(|w| w[1] < w[0]);
        if !(inc || dec) || !c.iter().all(|y| y.is_finite()) {
            return Err(PtoError::InvalidConfig("lane centerlines must be strictly monotone".into()));
        }
        Ok(())
    }
}

/// Number of candidates per cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    /// One candidate on the center lane.
    Pto1,
    /// One candidate per lane.
    Pto3,
    /// Four speed levels on the center lane plus both outer lanes.
    Pto6,
}

impl PlannerMode {
    pub fn candidate_count(self) -> usize {
        match self {
            PlannerMode::Pto1 => 1,
            PlannerMode::Pto3 => 3,
            PlannerMode::Pto6 => 6,
        }
    }
}

impl fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerMode::Pto1 => "pto1",
            PlannerMode::Pto3 => "pto3",
            PlannerMode::Pto6 => "pto6",
        })
    }
}

impl FromStr for PlannerMode {
    type Err = PtoError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pto1" => Ok(PlannerMode::Pto1),
            "pto3" => Ok(PlannerMode::Pto3),
            "pto6" => Ok(PlannerMode::Pto6),
            other => Err(PtoError::InvalidConfig(format!("unknown planner mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig<T> {
    pub mode: PlannerMode,
    pub ocp: OcpSettings<T>,
    pub eval: EvalWeights<T>,
    /// Target-speed fractions of the goal speed for the four same-lane
    /// candidates of `Pto6`.
    pub speed_fractions: [T; 4],
    pub solve_mode: SolveMode,
    pub sqp: SqpSettings,
}

impl<T: Scalar> PlannerConfig<T> {
    pub fn standard(mode: PlannerMode, lambda: T) -> Self {
        PlannerConfig {
            mode,
            ocp: OcpSettings::standard(lambda),
            eval: EvalWeights::standard(),
            speed_fractions: [T::lit(1.0), T::lit(0.8), T::lit(0.6), T::lit(0.4)],
            solve_mode: SolveMode::RealTimeIteration,
            sqp: SqpSettings::default(),
        }
    }

    pub fn candidate_count(&self) -> usize {
        self.mode.candidate_count()
    }

    pub fn check(&self, lanes: &LaneSet<T>) -> Result<()> {
        self.ocp.check()?;
        self.eval.check(self.ocp.horizon)?;
        lanes.check()?;
        if self.mode != PlannerMode::Pto1 && lanes.len() != 3 {
            return Err(PtoError::InvalidConfig(format!("{} needs exactly three lanes", self.mode)));
        }
        let v = &self.ocp.vehicle;
        for f in self.speed_fractions {
            let s = f * self.eval.v_goal;
            if !(s >= v.v_min && s <= v.v_max) {
                return Err(PtoError::InvalidConfig("candidate target speed outside [v_min, v_max]".into()));
            }
        }
        Ok(())
    }
}

/// Target lane and speed of one candidate; `id` is stable across cycles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec<T> {
    pub id: usize,
    pub lane: usize,
    pub lateral: T,
    pub speed: T,
}

#[derive(Clone, Debug)]
pub struct CandidateTrajectory<T> {
    pub spec: CandidateSpec<T>,
    pub solution: Solution<T>,
    /// Barrier values indexed `[k][i]` against SV `i` predicted to stage `k`.
    pub barriers: Vec<Vec<T>>,
    pub feasible: bool,
}

impl<T: Scalar> CandidateTrajectory<T> {
    pub fn min_barrier(&self) -> Option<T> {
        self.barriers.iter().flatten().copied().reduce(T::min)
    }
}

/// Candidate specs for the configured mode, ordered by id.
pub fn make_candidates<T: Scalar>(
    lanes: &LaneSet<T>,
    _ev: &EvState<T>,
    cfg: &PlannerConfig<T>,
) -> Vec<CandidateSpec<T>> {
    let vg = cfg.eval.v_goal;
    let spec = |id, lane: usize, speed| CandidateSpec { id, lane, lateral: lanes.center(lane), speed };
    match cfg.mode {
        PlannerMode::Pto1 => vec![spec(0, lanes.center_lane(), vg)],
        PlannerMode::Pto3 => (0..lanes.len()).map(|l| spec(l, l, vg)).collect(),
        PlannerMode::Pto6 => {
            let center = lanes.center_lane();
            let mut out: Vec<_> =
                cfg.speed_fractions.iter().enumerate().map(|(j, f)| spec(j, center, *f * vg)).collect();
            out.push(spec(4, 0, vg));
            out.push(spec(5, lanes.len() - 1, vg));
            out
        }
    }
}

/// Barrier of every stage state against every SV prediction.
pub fn barrier_grid<T: Scalar>(solution: &Solution<T>, svs: &[SvState<T>], cfg: &PlannerConfig<T>) -> Vec<Vec<T>> {
    let w = &cfg.ocp.weights;
    solution
        .vars
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let t = cfg.ocp.ts * T::lit(k as f64);
            svs.iter().map(|o| barrier_h((x.px, x.py), &predict_sv(o, t), w)).collect()
        })
        .collect()
}

/// Transcribes and solves every candidate concurrently. `prev[j]` is the
/// previous solution of candidate `j`, if any.
pub fn plan_parallel<T: Scalar>(
    ev: &EvState<T>,
    svs: &[SvState<T>],
    prev: &[Option<Solution<T>>],
    lanes: &LaneSet<T>,
    cfg: &PlannerConfig<T>,
) -> Result<Vec<CandidateTrajectory<T>>> {
    let specs = make_candidates(lanes, ev, cfg);
    specs
        .par_iter()
        .map(|spec| {
            let target = LaneTarget { lateral: spec.lateral, speed: spec.speed };
            let problem = transcribe(&target, ev, svs, &cfg.ocp)?;
            let warm = prev.get(spec.id).and_then(Option::as_ref);
            let init = initialize(&problem, warm);
            let solution = solve_sqp_with(&problem, init, cfg.solve_mode, &cfg.sqp)?;
            let barriers = barrier_grid(&solution, svs, cfg);
            Ok(CandidateTrajectory { spec: *spec, solution, barriers, feasible: true })
        })
        .collect()
}

/// Flags candidates whose next state lies inside any SV ellipse predicted
/// one interval ahead. Trajectories are left untouched.
pub fn precheck_safety<T: Scalar>(
    mut cands: Vec<CandidateTrajectory<T>>,
    svs: &[SvState<T>],
    cfg: &PlannerConfig<T>,
) -> Vec<CandidateTrajectory<T>> {
    let w = &cfg.ocp.weights;
    for c in cands.iter_mut() {
        let x1 = c.solution.vars.states.get(1).copied().unwrap_or(c.solution.vars.states[0]);
        c.feasible = svs.iter().all(|o| barrier_h((x1.px, x1.py), &predict_sv(o, cfg.ocp.ts), w) >= T::zero());
    }
    cands
}

/// Maximal braking while steering the yaw rate back to zero.
pub fn fallback_brake<T: Scalar>(ev: &EvState<T>, params: &VehicleParams<T>, ts: T) -> ControlInput<T> {
    params.clamp_control(ControlInput::new(params.a_min, -ev.omega / ts))
}
