//! Stage and terminal costs of the lane-tracking optimal control problem,
//! including the discounted ellipse barrier, with Gauss-Newton derivatives.

use serde::{Deserialize, Serialize};

use crate::dynamics::{state_diff, ControlInput, EvState, SvState, NU, NX};
use crate::linalg::{Mat, Vector};
use crate::scalar::Scalar;

/// Size of the stacked stage variable `(x, u)`.
pub const NZ: usize = NX + NU;

/// Safety weight used by the bundled scenario. Large enough that the
/// barrier term competes with the tracking and terminal weights.
pub const SAFETY_WEIGHT: f64 = 5e6;

/// Floor on `eta + h` in the safety measure.
pub const BARRIER_DENOM_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights<T> {
    /// Diagonal of the terminal weight.
    pub q_terminal: [T; NX],
    /// Diagonal terminal selector.
    pub iota_terminal: [T; NX],
    /// Diagonal of the tracking weight.
    pub q_tracking: [T; NX],
    /// Diagonal tracking selector.
    pub iota_tracking: [T; NX],
    /// Diagonal of the control weight.
    pub r: [T; NU],
    /// Safety weight per perceived SV, indexed by perception rank. The last
    /// entry is reused when more SVs are perceived than entries exist.
    pub lambda: Vec<T>,
    /// Time constant of the safety discount (s).
    pub gamma: T,
    pub eta: T,
    pub epsilon: T,
    pub c: T,
    /// Longitudinal semi-axis of the safety ellipse (m).
    pub ellipse_a: T,
    /// Lateral semi-axis of the safety ellipse (m).
    pub ellipse_b: T,
}

impl<T: Scalar> CostWeights<T> {
    /// Cost weights of the three-lane scenario, with the safety weight set
    /// to `lambda` for every perceived SV.
    pub fn standard(lambda: T) -> Self {
        let l = T::lit;
        CostWeights {
            q_terminal: [l(0.0), l(1e9), l(1e9), l(0.0), l(1e6)],
            iota_terminal: [l(0.0), l(1.0), l(1.0), l(0.0), l(1.0)],
            q_tracking: [l(0.0), l(1e3), l(0.0), l(1e5), l(0.0)],
            iota_tracking: [l(0.0), l(1.0), l(0.0), l(1.0), l(0.0)],
            r: [l(2e4), l(1e6)],
            lambda: vec![lambda; 3],
            gamma: l(50.0),
            eta: l(1.0),
            epsilon: l(1e-5),
            c: l(8.0),
            ellipse_a: l(3.0),
            ellipse_b: l(2.0),
        }
    }

    pub fn lambda_for(&self, i: usize) -> T {
        match self.lambda.len() {
            0 => T::zero(),
            n => self.lambda[i.min(n - 1)],
        }
    }

    pub fn check(&self) -> Result<(), &'static str> {
        let nonneg = |xs: &[T]| xs.iter().all(|v| *v >= T::zero() && v.is_finite());
        if !nonneg(&self.q_terminal) || !nonneg(&self.iota_terminal) {
            return Err("terminal weights must be finite and nonnegative");
        }
        if !nonneg(&self.q_tracking) || !nonneg(&self.iota_tracking) {
            return Err("tracking weights must be finite and nonnegative");
        }
        if !nonneg(&self.r) || !nonneg(&self.lambda) {
            return Err("control and safety weights must be finite and nonnegative");
        }
        let pos = [self.gamma, self.eta, self.epsilon, self.ellipse_a, self.ellipse_b];
        if !pos.iter().all(|v| *v > T::zero() && v.is_finite()) {
            return Err("gamma, eta, epsilon and ellipse axes must be positive");
        }
        if !self.c.is_finite() {
            return Err("barrier offset c must be finite");
        }
        Ok(())
    }

    fn terminal_diag(&self) -> [T; NX] {
        let mut d = [T::zero(); NX];
        for i in 0..NX {
            d[i] = self.iota_terminal[i] * self.iota_terminal[i] * self.q_terminal[i];
        }
        d
    }

    fn tracking_diag(&self) -> [T; NX] {
        let mut d = [T::zero(); NX];
        for i in 0..NX {
            d[i] = self.iota_tracking[i] * self.iota_tracking[i] * self.q_tracking[i];
        }
        d
    }
}

/// Reference state for the tracking term. Only components selected by the
/// tracking selector matter.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct DesiredState<T>(pub EvState<T>);

impl<T: Scalar> DesiredState<T> {
    pub fn cruise(lane_y: T, speed: T) -> Self {
        DesiredState(EvState::new(T::zero(), lane_y, T::zero(), speed, T::zero()))
    }
}

/// Gradient and PSD Gauss-Newton Hessian over the stacked `(x, u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageDerivatives<T> {
    pub grad: Vector<T, NZ>,
    pub hess: Mat<T, NZ, NZ>,
}

/// Terminal cost `(iota_T d)^T Q_T (iota_T d)` with `d = x_N (-) reference`.
pub fn terminal_cost<T: Scalar>(x_n: &EvState<T>, reference: &EvState<T>, w: &CostWeights<T>) -> T {
    let d = state_diff(x_n, reference).0;
    let q = w.terminal_diag();
    (0..NX).fold(T::zero(), |s, i| s + q[i] * d[i] * d[i])
}

/// Terminal gradient and (exact) Hessian with respect to `x_N`.
pub fn terminal_derivatives<T: Scalar>(
    x_n: &EvState<T>,
    reference: &EvState<T>,
    w: &CostWeights<T>,
) -> (Vector<T, NX>, Mat<T, NX, NX>) {
    let d = state_diff(x_n, reference).0;
    let q = w.terminal_diag();
    let two = T::lit(2.0);
    let mut g = Vector::zeros();
    let mut h = Mat::zeros();
    for i in 0..NX {
        g[i] = two * q[i] * d[i];
        h.0[i][i] = two * q[i];
    }
    (g, h)
}

/// Goal-tracking cost `(iota_m (x - x_d))^T Q_m (iota_m (x - x_d))`.
pub fn goal_cost<T: Scalar>(x: &EvState<T>, xd: &DesiredState<T>, w: &CostWeights<T>) -> T {
    let d = state_diff(x, &xd.0).0;
    let q = w.tracking_diag();
    (0..NX).fold(T::zero(), |s, i| s + q[i] * d[i] * d[i])
}

/// Energy term `u^T R u`.
pub fn energy_cost<T: Scalar>(u: &ControlInput<T>, w: &CostWeights<T>) -> T {
    w.r[0] * u.a * u.a + w.r[1] * u.omega_dot * u.omega_dot
}

/// Ellipse barrier; nonnegative outside the safety ellipse around `o`.
pub fn barrier_h<T: Scalar>(p: (T, T), o: &SvState<T>, w: &CostWeights<T>) -> T {
    let dx = (p.0 - o.ox) / w.ellipse_a;
    let dy = (p.1 - o.oy) / w.ellipse_b;
    dx * dx + dy * dy - T::one()
}

/// Safety measure of a barrier value, with `eta + h` floored at
/// [`BARRIER_DENOM_FLOOR`].
pub fn safety_h<T: Scalar>(h: T, w: &CostWeights<T>) -> T {
    let denom = (w.eta + h).max(T::lit(BARRIER_DENOM_FLOOR));
    let s = h - w.c;
    (T::one() - s / (w.epsilon + (s * s).sqrt())) / denom
}

/// Derivative of [`safety_h`] with respect to `h`.
pub fn safety_h_prime<T: Scalar>(h: T, w: &CostWeights<T>) -> T {
    let raw = w.eta + h;
    let floor = T::lit(BARRIER_DENOM_FLOOR);
    let denom = raw.max(floor);
    let s = h - w.c;
    let e = w.epsilon + s.abs();
    let g = T::one() - s / e;
    let dg = -w.epsilon / (e * e);
    let df = if raw > floor { -T::one() / (denom * denom) } else { T::zero() };
    df * g + dg / denom
}

/// Discounted safety weight `lambda_i exp(-t / gamma)`.
pub fn discount_weight<T: Scalar>(i: usize, t: T, w: &CostWeights<T>) -> T {
    w.lambda_for(i) * (-t / w.gamma).exp()
}

/// Spatiotemporal safety cost against SVs already predicted to offset `t`.
pub fn safety_cost<T: Scalar>(x: &EvState<T>, svs: &[SvState<T>], t: T, w: &CostWeights<T>) -> T {
    svs.iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, o)| acc + discount_weight(i, t, w) * safety_h(barrier_h((x.px, x.py), o, w), w))
}

/// Stage cost: tracking + safety + energy.
pub fn running_cost<T: Scalar>(
    x: &EvState<T>,
    u: &ControlInput<T>,
    xd: &DesiredState<T>,
    svs: &[SvState<T>],
    t: T,
    w: &CostWeights<T>,
) -> T {
    goal_cost(x, xd, w) + safety_cost(x, svs, t, w) + energy_cost(u, w)
}

/// Exact gradient of [`running_cost`] and a PSD Hessian approximation.
///
/// Tracking and energy terms are quadratic and contribute their exact
/// Hessians. Each safety term `w_i H_i >= 0` is written as `r_i^2` with
/// `r_i = sqrt(w_i H_i)`, giving the Gauss-Newton block
/// `2 grad(r_i) grad(r_i)^T = w_i grad(H_i) grad(H_i)^T / (2 H_i)`.
pub fn stage_derivatives<T: Scalar>(
    x: &EvState<T>,
    u: &ControlInput<T>,
    xd: &DesiredState<T>,
    svs: &[SvState<T>],
    t: T,
    w: &CostWeights<T>,
) -> StageDerivatives<T> {
    let two = T::lit(2.0);
    let mut grad = Vector::<T, NZ>::zeros();
    let mut hess = Mat::<T, NZ, NZ>::zeros();

    let d = state_diff(x, &xd.0).0;
    let q = w.tracking_diag();
    for i in 0..NX {
        grad[i] = two * q[i] * d[i];
        hess.0[i][i] = two * q[i];
    }

    let ua = u.to_array();
    for j in 0..NU {
        grad[NX + j] = two * w.r[j] * ua[j];
        hess.0[NX + j][NX + j] = two * w.r[j];
    }

    let a2 = w.ellipse_a * w.ellipse_a;
    let b2 = w.ellipse_b * w.ellipse_b;
    for (i, o) in svs.iter().enumerate() {
        let wi = discount_weight(i, t, w);
        if wi == T::zero() {
            continue;
        }
        let h = barrier_h((x.px, x.py), o, w);
        let hv = safety_h(h, w);
        let dh = safety_h_prime(h, w);
        let gx = wi * dh * two * (x.px - o.ox) / a2;
        let gy = wi * dh * two * (x.py - o.oy) / b2;
        grad[0] = grad[0] + gx;
        grad[1] = grad[1] + gy;
        if hv > T::min_positive_value() {
            // w grad(H) grad(H)^T / (2H) = (w g)(w g)^T / (2 w H)
            let s = T::one() / (two * wi * hv);
            hess.0[0][0] = hess.0[0][0] + gx * gx * s;
            hess.0[0][1] = hess.0[0][1] + gx * gy * s;
            hess.0[1][0] = hess.0[1][0] + gx * gy * s;
            hess.0[1][1] = hess.0[1][1] + gy * gy * s;
        }
    }
    StageDerivatives { grad, hess }
}

/// Terminal-dominance check: the terminal cost of a unit deviation in the
/// least-weighted selected terminal component must exceed `running_total`.
pub fn terminal_dominates<T: Scalar>(w: &CostWeights<T>, running_total: T) -> bool {
    let unit = w.terminal_diag().iter().copied().filter(|q| *q > T::zero()).fold(T::infinity(), T::min);
    unit.is_finite() && unit > running_total
}
