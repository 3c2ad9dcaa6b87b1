//! Gauss-Newton SQP over the multiple-shooting variables with an l1 merit
//! line search.

use std::borrow::Cow;
use std::time::Instant;

use crate::costs::{running_cost, stage_derivatives, terminal_cost, terminal_derivatives, terminal_dominates};
use crate::dynamics::{rk4_step_with_jacobians, state_diff, ControlInput, EvState, NU, NX};
use crate::error::Result;
use crate::linalg::{Mat, Vector};
use crate::scalar::Scalar;

use super::qp::{solve_riccati, QpSolution, StageQp};
use super::{
    defect_norms, max_state_violation, state_penalty, DecisionVariables, ShootingProblem, Solution, SolveMode,
    SolveStatus,
};

/// Iteration limits, tolerances and line-search constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub rti_iterations: usize,
    pub kkt_tol: f64,
    pub step_tol: f64,
    pub defect_tol: f64,
    /// Initial (and minimum) l1 merit penalty.
    pub merit_penalty: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Largest state box violation accepted as converged in `Converge` mode.
    pub state_tol: f64,
    /// Factor applied to the state penalty while the violation exceeds
    /// `state_tol`, up to `max_state_penalty`.
    pub penalty_growth: f64,
    pub max_state_penalty: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            max_iterations: 50,
            rti_iterations: 3,
            kkt_tol: 1e-4,
            step_tol: 1e-6,
            defect_tol: 1e-6,
            merit_penalty: 1e4,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 12,
            state_tol: 1e-3,
            penalty_growth: 10.0,
            max_state_penalty: 1e13,
        }
    }
}

struct Linearization<T> {
    stages: Vec<StageQp<T>>,
    terminal_grad: Vector<T, NX>,
    terminal_hess: Mat<T, NX, NX>,
}

fn penalty_derivatives<T: Scalar>(x: &EvState<T>, problem: &ShootingProblem<T>) -> (Vector<T, NX>, Mat<T, NX, NX>) {
    let (lo, hi) = problem.settings.vehicle.state_bounds();
    let rho = problem.settings.state_penalty;
    let two = T::lit(2.0);
    let a = x.to_array();
    let mut g = Vector::zeros();
    let mut h = Mat::zeros();
    for j in 0..NX {
        if a[j] > hi[j] {
            g[j] = two * rho * (a[j] - hi[j]);
            h.0[j][j] = two * rho;
        } else if a[j] < lo[j] {
            g[j] = two * rho * (a[j] - lo[j]);
            h.0[j][j] = two * rho;
        }
    }
    (g, h)
}

fn linearize<T: Scalar>(problem: &ShootingProblem<T>, z: &DecisionVariables<T>) -> Linearization<T> {
    let n = problem.horizon();
    let w = &problem.settings.weights;
    let (u_lo, u_hi) = problem.settings.vehicle.control_bounds();
    let ts = problem.ts();
    let stages = (0..n)
        .map(|k| {
            let x = &z.states[k];
            let u = &z.controls[k];
            let (pred, a, b) = rk4_step_with_jacobians(x, u, ts);
            let d = state_diff(&pred, &z.states[k + 1]);
            let der =
                stage_derivatives(x, u, &problem.desired[k], &problem.sv_predictions[k], problem.stage_time(k), w);
            let mut q = Vector::zeros();
            let mut qxx = Mat::zeros();
            let mut r = Vector::zeros();
            let mut ruu = Mat::zeros();
            let mut rux = Mat::zeros();
            for i in 0..NX {
                q[i] = der.grad[i];
                for j in 0..NX {
                    qxx.0[i][j] = der.hess.0[i][j];
                }
            }
            for i in 0..NU {
                r[i] = der.grad[NX + i];
                for j in 0..NU {
                    ruu.0[i][j] = der.hess.0[NX + i][NX + j];
                }
                for j in 0..NX {
                    rux.0[i][j] = der.hess.0[NX + i][j];
                }
            }
            if k > 0 {
                let (pg, ph) = penalty_derivatives(x, problem);
                q = q + pg;
                qxx = qxx + ph;
            }
            let ua = u.to_array();
            StageQp {
                a,
                b,
                d: d.as_vector(),
                q,
                r,
                qxx,
                ruu,
                rux,
                du_lo: [u_lo[0] - ua[0], u_lo[1] - ua[1]],
                du_hi: [u_hi[0] - ua[0], u_hi[1] - ua[1]],
            }
        })
        .collect();
    let xn = &z.states[n];
    let (tg, th) = terminal_derivatives(xn, &problem.terminal_reference, w);
    let (pg, ph) = penalty_derivatives(xn, problem);
    Linearization { stages, terminal_grad: tg + pg, terminal_hess: th + ph }
}

/// Objective (including the state-box penalty) and the summed running cost.
fn objective<T: Scalar>(problem: &ShootingProblem<T>, z: &DecisionVariables<T>) -> (T, T) {
    let n = problem.horizon();
    let w = &problem.settings.weights;
    let mut running = T::zero();
    let mut penalty = T::zero();
    for k in 0..n {
        running = running
            + running_cost(
                &z.states[k],
                &z.controls[k],
                &problem.desired[k],
                &problem.sv_predictions[k],
                problem.stage_time(k),
                w,
            );
        if k > 0 {
            penalty = penalty + state_penalty(&z.states[k], &problem.settings);
        }
    }
    let xn = &z.states[n];
    let total =
        running + penalty + terminal_cost(xn, &problem.terminal_reference, w) + state_penalty(xn, &problem.settings);
    (total, running)
}

fn defect_l1<T: Scalar>(problem: &ShootingProblem<T>, z: &DecisionVariables<T>) -> T {
    (0..problem.horizon()).fold(T::zero(), |s, k| {
        s + super::continuity_defect(&z.states[k], &z.controls[k], &z.states[k + 1], problem.ts()).norm_1()
    })
}

fn merit<T: Scalar>(problem: &ShootingProblem<T>, z: &DecisionVariables<T>, mu: T) -> T {
    objective(problem, z).0 + mu * defect_l1(problem, z)
}

fn take_step<T: Scalar>(
    problem: &ShootingProblem<T>,
    z: &DecisionVariables<T>,
    step: &QpSolution<T>,
    alpha: T,
) -> DecisionVariables<T> {
    let vehicle = &problem.settings.vehicle;
    let controls = z
        .controls
        .iter()
        .zip(&step.du)
        .map(|(u, du)| vehicle.clamp_control(ControlInput::new(u.a + alpha * du[0], u.omega_dot + alpha * du[1])))
        .collect();
    let mut states = Vec::with_capacity(z.states.len());
    states.push(problem.x0);
    for (x, dx) in z.states.iter().zip(&step.dx).skip(1) {
        let mut d = dx.to_array();
        for v in d.iter_mut() {
            *v = *v * alpha;
        }
        states.push(x.plus(&d));
    }
    DecisionVariables { controls, states }
}

fn directional_derivative<T: Scalar>(lin: &Linearization<T>, step: &QpSolution<T>) -> T {
    let n = lin.stages.len();
    let mut s = T::zero();
    for k in 0..n {
        s = s + lin.stages[k].q.dot(&step.dx[k]) + lin.stages[k].r.dot(&step.du[k]);
    }
    s + lin.terminal_grad.dot(&step.dx[n])
}

/// Infinity norm of the projected Lagrangian gradient and the defects.
fn kkt_residual<T: Scalar>(
    problem: &ShootingProblem<T>,
    z: &DecisionVariables<T>,
    lin: &Linearization<T>,
    step: &QpSolution<T>,
) -> T {
    let n = lin.stages.len();
    let (u_lo, u_hi) = problem.settings.vehicle.control_bounds();
    let tiny = T::lit(1e-12);
    let mut res = T::zero();
    for k in 0..n {
        let s = &lin.stages[k];
        let lam_next = step.costate[k + 1];
        let gu = s.r + s.b.transpose() * lam_next;
        let ua = z.controls[k].to_array();
        for j in 0..NU {
            let at_lo = ua[j] <= u_lo[j] + tiny && gu[j] > T::zero();
            let at_hi = ua[j] >= u_hi[j] - tiny && gu[j] < T::zero();
            if !(at_lo || at_hi) {
                res = res.max(gu[j].abs());
            }
        }
        if k > 0 {
            let gx = s.q + s.a.transpose() * lam_next - step.costate[k];
            res = res.max(gx.amax());
        }
        res = res.max(s.d.amax());
    }
    res.max((lin.terminal_grad - step.costate[n]).amax())
}

/// Solves one shooting problem from `init` with the default settings.
pub fn solve_sqp<T: Scalar>(
    problem: &ShootingProblem<T>,
    init: DecisionVariables<T>,
    mode: SolveMode,
) -> Result<Solution<T>> {
    solve_sqp_with(problem, init, mode, &SqpSettings::default())
}

/// Solves one shooting problem from `init`.
///
/// Returns an error only for malformed QP data (non-PSD Hessian blocks);
/// line-search failure yields a `Degraded` solution at the best iterate.
pub fn solve_sqp_with<T: Scalar>(
    problem: &ShootingProblem<T>,
    init: DecisionVariables<T>,
    mode: SolveMode,
    settings: &SqpSettings,
) -> Result<Solution<T>> {
    let start = Instant::now();
    let n = problem.horizon();
    assert_eq!(init.controls.len(), n, "initial controls must match the horizon");
    assert_eq!(init.states.len(), n + 1, "initial states must match the horizon");

    let vehicle = &problem.settings.vehicle;
    let mut z = init;
    z.states[0] = problem.x0;
    for u in z.controls.iter_mut() {
        *u = vehicle.clamp_control(*u);
    }
    let mut problem = Cow::Borrowed(problem);

    let budget = match mode {
        SolveMode::Converge => settings.max_iterations,
        SolveMode::RealTimeIteration => settings.rti_iterations,
    };
    let mut mu = T::lit(settings.merit_penalty);
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;
    let mut kkt;

    loop {
        let lin = linearize(&problem, &z);
        let step = solve_riccati(&lin.stages, &lin.terminal_grad, &lin.terminal_hess)?;
        kkt = kkt_residual(&problem, &z, &lin, &step);
        let defect_inf = lin.stages.iter().fold(T::zero(), |m, s| m.max(s.d.amax()));
        let step_inf = step.dx.iter().map(|v| v.amax()).chain(step.du.iter().map(|v| v.amax())).fold(T::zero(), T::max);

        if defect_inf < T::lit(settings.defect_tol)
            && (kkt < T::lit(settings.kkt_tol) || step_inf < T::lit(settings.step_tol))
        {
            let rho = problem.settings.state_penalty;
            let grown = rho * T::lit(settings.penalty_growth);
            if mode == SolveMode::Converge
                && max_state_violation(&z.states[1..], &problem.settings.vehicle) > T::lit(settings.state_tol)
                && grown <= T::lit(settings.max_state_penalty)
                && iterations < budget
            {
                problem.to_mut().settings.state_penalty = grown;
                continue;
            }
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= budget {
            break;
        }

        let defects = lin.stages.iter().fold(T::zero(), |m, s| m + s.d.0.iter().fold(T::zero(), |a, v| a + v[0].abs()));
        let grad_dot = directional_derivative(&lin, &step);
        if defects > T::zero() {
            // keep the step a descent direction of the l1 merit
            let needed = T::lit(2.0) * grad_dot / defects;
            if needed > mu {
                mu = needed;
            }
        }
        let slope = grad_dot - mu * defects;

        let phi0 = merit(&problem, &z, mu);
        let c1 = T::lit(settings.armijo_c1);
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..=settings.max_backtracks {
            let trial = take_step(&problem, &z, &step, alpha);
            let phi = merit(&problem, &trial, mu);
            let bound = phi0 + c1 * alpha * slope.min(T::zero());
            if phi.is_finite() && phi <= bound {
                accepted = Some(trial);
                break;
            }
            alpha = alpha * T::lit(settings.backtrack_factor);
        }
        iterations += 1;
        match accepted {
            Some(trial) => z = trial,
            None => {
                status = SolveStatus::Degraded;
                break;
            }
        }
    }

    let (obj, running) = objective(&problem, &z);
    let norms = defect_norms(&problem, &z);
    let terminal_dominant = terminal_dominates(&problem.settings.weights, running);
    Ok(Solution {
        vars: z,
        objective: obj,
        defect_norms: norms,
        iterations,
        status,
        kkt_residual: kkt,
        merit_penalty: mu,
        terminal_dominant,
        solve_time: start.elapsed().as_secs_f64(),
    })
}

/// Merit value of `vars` for penalty `mu`; exposed for monotonicity tests.
pub fn merit_value<T: Scalar>(problem: &ShootingProblem<T>, vars: &DecisionVariables<T>, mu: T) -> T {
    merit(problem, vars, mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::SvState;
    use crate::nlp::{initialize, transcribe, LaneTarget, OcpSettings};

    fn solve(x0: [f64; 5], lateral: f64, svs: &[SvState<f64>], mode: SolveMode) -> Solution<f64> {
        let settings = OcpSettings::standard(5.0);
        let p = transcribe(&LaneTarget { lateral, speed: 15.0 }, &EvState::from_array(x0), svs, &settings).unwrap();
        let init = initialize(&p, None);
        solve_sqp(&p, init, mode).unwrap()
    }

    #[test]
    fn cruise_is_already_optimal() {
        let s = solve([0.0, -6.0, 0.0, 15.0, 0.0], -6.0, &[], SolveMode::Converge);
        assert_eq!(s.status, SolveStatus::Converged);
        assert!(s.objective < 1e-6, "{}", s.objective);
    }

    #[test]
    fn lane_change_converges() {
        let s = solve([0.0, -6.0, 0.0, 15.0, 0.0], -2.0, &[], SolveMode::Converge);
        assert_eq!(s.status, SolveStatus::Converged, "{s:?}");
        assert!(s.max_defect() < 1e-6);
        let last = s.vars.states.last().unwrap();
        assert!((last.py + 2.0).abs() < 0.05, "{last:?}");
    }
}
