//! Multiple-shooting transcription of one lane candidate and its
//! Gauss-Newton SQP solver.

mod qp;
mod sqp;

use serde::{Deserialize, Serialize};

pub use qp::{solve_riccati, QpSolution, StageQp};
pub use sqp::{merit_value, solve_sqp, solve_sqp_with, SqpSettings};

use crate::costs::{CostWeights, DesiredState};
use crate::dynamics::{
    predict_sv, rk4_step, rollout, state_diff, ControlInput, EvState, StateTangent, SvState, VehicleParams, NX,
};
use crate::error::{PtoError, Result};
use crate::scalar::Scalar;

/// Quadratic penalty weight on state box violations.
pub const STATE_PENALTY: f64 = 1e8;

/// Horizon, weights and limits shared by every candidate problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpSettings<T> {
    /// Number of shooting intervals `N`.
    pub horizon: usize,
    /// Interval length `Ts` (s).
    pub ts: T,
    pub weights: CostWeights<T>,
    pub vehicle: VehicleParams<T>,
    pub state_penalty: T,
}

impl<T: Scalar> OcpSettings<T> {
    pub fn standard(lambda: T) -> Self {
        OcpSettings {
            horizon: 50,
            ts: T::lit(0.1),
            weights: CostWeights::standard(lambda),
            vehicle: VehicleParams::standard(),
            state_penalty: T::lit(STATE_PENALTY),
        }
    }

    /// Horizon length `T = N Ts`.
    pub fn horizon_time(&self) -> T {
        self.ts * T::lit(self.horizon as f64)
    }

    pub fn check(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(PtoError::InvalidConfig("horizon must be >= 1".into()));
        }
        if !(self.ts > T::zero()) || !self.ts.is_finite() {
            return Err(PtoError::InvalidConfig("ts must be positive".into()));
        }
        if !(self.state_penalty >= T::zero()) {
            return Err(PtoError::InvalidConfig("state penalty must be nonnegative".into()));
        }
        self.weights.check().map_err(|e| PtoError::InvalidConfig(e.into()))?;
        self.vehicle.check().map_err(|e| PtoError::InvalidConfig(format!("vehicle limits: {e} min must be < max")))?;
        Ok(())
    }
}

/// Lateral and speed goal of one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneTarget<T> {
    pub lateral: T,
    pub speed: T,
}

/// One transcribed candidate problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingProblem<T> {
    pub x0: EvState<T>,
    /// SV predictions indexed `[k][i]` for `k = 0..=N`.
    pub sv_predictions: Vec<Vec<SvState<T>>>,
    /// Desired state for stages `0..N`.
    pub desired: Vec<DesiredState<T>>,
    pub terminal_reference: EvState<T>,
    pub settings: OcpSettings<T>,
}

impl<T: Scalar> ShootingProblem<T> {
    pub fn horizon(&self) -> usize {
        self.settings.horizon
    }

    pub fn ts(&self) -> T {
        self.settings.ts
    }

    /// Number of perceived SVs `M`.
    pub fn sv_count(&self) -> usize {
        self.sv_predictions.first().map_or(0, Vec::len)
    }

    /// Prediction of SV `i` at stage `k`.
    pub fn sv_at(&self, i: usize, k: usize) -> &SvState<T> {
        &self.sv_predictions[k][i]
    }

    pub fn stage_time(&self, k: usize) -> T {
        self.settings.ts * T::lit(k as f64)
    }
}

/// Controls `u_0..u_{N-1}` and states. `states[0]` mirrors the fixed
/// initial state; `states[1..=N]` are decision variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionVariables<T> {
    pub controls: Vec<ControlInput<T>>,
    pub states: Vec<EvState<T>>,
}

impl<T: Scalar> DecisionVariables<T> {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Degraded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// Iterate to the convergence tolerances (at most 50 iterations).
    Converge,
    /// Fixed small iteration budget per control cycle.
    #[serde(rename = "rti")]
    RealTimeIteration,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Solution<T> {
    pub vars: DecisionVariables<T>,
    pub objective: T,
    /// Infinity norm of each stage's continuity defect.
    pub defect_norms: Vec<T>,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Last KKT residual estimate (infinity norm).
    pub kkt_residual: T,
    /// Final penalty parameter of the l1 merit function.
    pub merit_penalty: T,
    /// Whether the terminal cost of a unit deviation exceeds the summed
    /// running cost of this solution.
    pub terminal_dominant: bool,
    /// Wall time of the solve (s); not part of the deterministic output.
    pub solve_time: f64,
}

impl<T: Scalar> Solution<T> {
    pub fn max_defect(&self) -> T {
        self.defect_norms.iter().copied().fold(T::zero(), T::max)
    }

    /// Same iterate, status and numbers, ignoring wall time.
    pub fn same_result(&self, other: &Self) -> bool {
        self.vars == other.vars
            && self.objective.to_f64_lossy().to_bits() == other.objective.to_f64_lossy().to_bits()
            && self.defect_norms == other.defect_norms
            && self.iterations == other.iterations
            && self.status == other.status
    }
}

/// `f(x_k, u_k) (-) x_{k+1}` for one shooting interval.
pub fn continuity_defect<T: Scalar>(xk: &EvState<T>, uk: &ControlInput<T>, xk1: &EvState<T>, ts: T) -> StateTangent<T> {
    state_diff(&rk4_step(xk, uk, ts), xk1)
}

/// Builds the shooting problem for one lane target.
pub fn transcribe<T: Scalar>(
    target: &LaneTarget<T>,
    ev: &EvState<T>,
    svs: &[SvState<T>],
    settings: &OcpSettings<T>,
) -> Result<ShootingProblem<T>> {
    settings.check()?;
    if !ev.is_finite() {
        return Err(PtoError::NonFinite("ego state"));
    }
    if !svs.iter().all(SvState::is_finite) {
        return Err(PtoError::NonFinite("surrounding vehicle state"));
    }
    if !target.lateral.is_finite() || !target.speed.is_finite() {
        return Err(PtoError::NonFinite("lane target"));
    }
    let n = settings.horizon;
    let sv_predictions = (0..=n)
        .map(|k| {
            let t = settings.ts * T::lit(k as f64);
            svs.iter().map(|o| predict_sv(o, t)).collect()
        })
        .collect();
    let desired = vec![DesiredState::cruise(target.lateral, target.speed); n];
    let terminal_reference = EvState::new(T::zero(), target.lateral, T::zero(), target.speed, T::zero());
    Ok(ShootingProblem { x0: *ev, sv_predictions, desired, terminal_reference, settings: settings.clone() })
}

/// Initial guess: cold start (zero controls, rolled-out states) or a
/// shifted previous solution.
pub fn initialize<T: Scalar>(problem: &ShootingProblem<T>, prev: Option<&Solution<T>>) -> DecisionVariables<T> {
    match prev {
        Some(p) if p.vars.horizon() == problem.horizon() => shift_warm_start(p, &problem.x0, problem.ts()),
        _ => {
            let controls = vec![ControlInput::zero(); problem.horizon()];
            let states = rollout(&problem.x0, &controls, problem.ts());
            DecisionVariables { controls, states }
        }
    }
}

/// Drops the executed control, repeats the last one and re-integrates the
/// states from the new initial state.
pub fn shift_warm_start<T: Scalar>(prev: &Solution<T>, x0: &EvState<T>, ts: T) -> DecisionVariables<T> {
    let old = &prev.vars.controls;
    let mut controls: Vec<ControlInput<T>> = old.iter().skip(1).copied().collect();
    if let Some(last) = old.last() {
        controls.push(*last);
    }
    let states = rollout(x0, &controls, ts);
    DecisionVariables { controls, states }
}

/// Infinity norm of every continuity defect of `vars`.
pub fn defect_norms<T: Scalar>(problem: &ShootingProblem<T>, vars: &DecisionVariables<T>) -> Vec<T> {
    (0..problem.horizon())
        .map(|k| continuity_defect(&vars.states[k], &vars.controls[k], &vars.states[k + 1], problem.ts()).norm_inf())
        .collect()
}

/// Quadratic penalty on state box violations.
pub fn state_penalty<T: Scalar>(x: &EvState<T>, settings: &OcpSettings<T>) -> T {
    let (lo, hi) = settings.vehicle.state_bounds();
    let a = x.to_array();
    (0..NX).fold(T::zero(), |s, j| {
        let over = (a[j] - hi[j]).max(T::zero());
        let under = (lo[j] - a[j]).max(T::zero());
        s + settings.state_penalty * (over * over + under * under)
    })
}

/// Largest state box violation over `states`.
pub fn max_state_violation<T: Scalar>(states: &[EvState<T>], vehicle: &VehicleParams<T>) -> T {
    let (lo, hi) = vehicle.state_bounds();
    states.iter().fold(T::zero(), |m, x| {
        let a = x.to_array();
        (0..NX).fold(m, |m, j| m.max(a[j] - hi[j]).max(lo[j] - a[j]))
    })
}
