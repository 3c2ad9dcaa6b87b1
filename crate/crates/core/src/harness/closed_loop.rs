//! Receding-horizon simulation of the ego vehicle in IDM traffic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::costs::barrier_h;
use crate::dynamics::{rk4_step, ControlInput, EvState};
use crate::error::{PtoError, Result};
use crate::evaluator::select;
use crate::nlp::{Solution, SolveStatus};
use crate::planner::{fallback_brake, plan_parallel, precheck_safety, PlannerConfig, PlannerMode};
use crate::traffic::{perceive_nearest_indices, step_traffic, Scenario};

/// Per-candidate detail of one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: usize,
    pub lane: usize,
    pub target_y: f64,
    pub speed: f64,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub feasible: bool,
    pub min_barrier: Option<f64>,
    /// Raw `[C_g, C_l, C_c, C_m]`; absent for infeasible candidates.
    pub raw: Option<[f64; 4]>,
    pub normalized: Option<[f64; 4]>,
    pub score: Option<f64>,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub time: f64,
    /// EV state at the start of the cycle.
    pub state: EvState<f64>,
    /// Control applied over the cycle.
    pub control: ControlInput<f64>,
    pub steer: f64,
    pub target_lane: usize,
    pub target_y: f64,
    /// Id of the executed candidate, `None` on fallback.
    pub candidate: Option<usize>,
    pub fallback: bool,
    /// Ids of the perceived SVs, nearest first.
    pub perceived: Vec<usize>,
    /// Barrier value of the EV against each perceived SV at cycle start.
    pub barriers: Vec<f64>,
    /// Longitudinal position after applying the control.
    pub px_end: f64,
    pub candidates: Vec<CandidateRecord>,
    /// Wall time of planning and selection (s).
    pub solve_time: f64,
}

impl CycleRecord {
    pub fn min_barrier(&self) -> Option<f64> {
        self.barriers.iter().copied().reduce(f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub mode: PlannerMode,
    pub period: f64,
    pub records: Vec<CycleRecord>,
    /// Executed solutions whose terminal cost did not dominate the running cost.
    pub dominance_violations: usize,
}

/// Runs the scenario for its full duration.
pub fn run_closed_loop(scenario: &Scenario<f64>, cfg: &PlannerConfig<f64>) -> Result<RunLog> {
    scenario.check()?;
    cfg.check(&scenario.lanes)?;
    let lanes = &scenario.lanes;
    let period = scenario.period;
    let weights = &cfg.ocp.weights;
    let vehicle = &cfg.ocp.vehicle;

    let mut ev = scenario.ev_initial;
    let mut agents = scenario.agents.clone();
    let mut warm: Vec<Option<Solution<f64>>> = vec![None; cfg.candidate_count()];
    let mut prev_lane = lanes.nearest(ev.py);
    let mut records = Vec::with_capacity(scenario.cycles());
    let mut dominance_violations = 0;

    for cycle in 0..scenario.cycles() {
        let time = cycle as f64 * period;
        let abort = |reason: String| PtoError::Aborted { time, reason };
        let idx = perceive_nearest_indices(&ev, &agents, scenario.perception_count);
        let svs: Vec<_> = idx.iter().map(|&i| agents[i].state).collect();
        let barriers: Vec<f64> = svs.iter().map(|o| barrier_h((ev.px, ev.py), o, weights)).collect();

        let start = Instant::now();
        let cands = plan_parallel(&ev, &svs, &warm, lanes, cfg).map_err(|e| abort(e.to_string()))?;
        let cands = precheck_safety(cands, &svs, cfg);
        let selection = match select(&cands, &cfg.eval, cfg.ocp.ts, prev_lane, lanes.center(prev_lane)) {
            Ok(s) => Some(s),
            Err(PtoError::NoFeasibleCandidate) => None,
            Err(e) => return Err(abort(e.to_string())),
        };
        let solve_time = start.elapsed().as_secs_f64();

        let (control, target_lane, chosen) = match &selection {
            Some(s) => {
                let c = &cands[s.index];
                if !c.solution.terminal_dominant {
                    dominance_violations += 1;
                }
                (c.solution.vars.controls[0], s.lane, Some(c.spec.id))
            }
            None => (fallback_brake(&ev, vehicle, period), prev_lane, None),
        };

        let candidates = cands
            .iter()
            .map(|c| {
                let scored = selection.as_ref().and_then(|s| s.scored.iter().find(|sc| sc.id == c.spec.id));
                CandidateRecord {
                    id: c.spec.id,
                    lane: c.spec.lane,
                    target_y: c.spec.lateral,
                    speed: c.spec.speed,
                    objective: c.solution.objective,
                    status: c.solution.status,
                    iterations: c.solution.iterations,
                    feasible: c.feasible,
                    min_barrier: c.min_barrier(),
                    raw: scored.map(|s| s.raw),
                    normalized: scored.map(|s| s.normalized),
                    score: scored.map(|s| s.score),
                    selected: chosen == Some(c.spec.id),
                }
            })
            .collect();

        let next = rk4_step(&ev, &control, period);
        if !next.is_finite() {
            return Err(abort("EV state left the finite range".into()));
        }
        agents = step_traffic(&agents, Some(&ev), lanes, period);
        for c in cands {
            warm[c.spec.id] = Some(c.solution);
        }

        records.push(CycleRecord {
            cycle,
            time,
            state: ev,
            control,
            steer: vehicle.steering_angle(&ev),
            target_lane,
            target_y: lanes.center(target_lane),
            candidate: chosen,
            fallback: chosen.is_none(),
            perceived: idx.iter().map(|&i| agents[i].id).collect(),
            barriers,
            px_end: next.px,
            candidates,
            solve_time,
        });
        prev_lane = target_lane;
        ev = next;
    }

    if dominance_violations > 0 {
        log::warn!(
            "terminal cost did not dominate the running cost in {dominance_violations} of {} executed solutions",
            records.len()
        );
    }
    Ok(RunLog { mode: cfg.mode, period, records, dominance_violations })
}
