//! Riccati sweep for the stage-structured Gauss-Newton QP.
//!
//! Solves
//!
//! ```text
//! min  sum_k 1/2 [dx;du]^T H_k [dx;du] + g_k^T [dx;du] + 1/2 dx_N^T P_N dx_N + p_N^T dx_N
//! s.t. dx_{k+1} = A_k dx_k + B_k du_k + d_k,   dx_0 = 0,   lo_k <= du_k <= hi_k
//! ```
//!
//! Control boxes are handled by an active set: clamped inputs are held at
//! their bound inside the sweep and released again when their multiplier
//! has the wrong sign.

use crate::costs::NZ;
use crate::dynamics::{NU, NX};
use crate::error::{PtoError, Result};
use crate::linalg::{inverse_spd2, Mat, Vector};
use crate::scalar::Scalar;

/// One stage of the linearized problem.
#[derive(Clone, Copy, Debug)]
pub struct StageQp<T> {
    pub a: Mat<T, NX, NX>,
    pub b: Mat<T, NX, NU>,
    /// Continuity defect `f(x_k, u_k) (-) x_{k+1}`.
    pub d: Vector<T, NX>,
    pub q: Vector<T, NX>,
    pub r: Vector<T, NU>,
    pub qxx: Mat<T, NX, NX>,
    pub ruu: Mat<T, NU, NU>,
    pub rux: Mat<T, NU, NX>,
    pub du_lo: [T; NU],
    pub du_hi: [T; NU],
}

#[derive(Clone, Debug)]
pub struct QpSolution<T> {
    /// `N + 1` state steps; the first is zero.
    pub dx: Vec<Vector<T, NX>>,
    pub du: Vec<Vector<T, NU>>,
    /// Multipliers of the linearized dynamics, `lambda_k` for `k = 0..=N`.
    pub costate: Vec<Vector<T, NX>>,
}

/// Upper bound on active-set passes before the last iterate is projected.
const MAX_ACTIVE_SET_PASSES: usize = 40;

/// Inputs held at a bound, per stage and input.
type Fixed<T> = Vec<[Option<T>; NU]>;

struct Sweep<T> {
    sol: QpSolution<T>,
    /// Gradient of the QP Lagrangian with respect to each input.
    grad_u: Vec<Vector<T, NU>>,
}

/// Riccati sweep with the inputs in `fixed` held at their values.
fn sweep<T: Scalar>(
    stages: &[StageQp<T>],
    terminal_grad: &Vector<T, NX>,
    terminal_hess: &Mat<T, NX, NX>,
    fixed: &Fixed<T>,
) -> Result<Sweep<T>> {
    let n = stages.len();
    let mut gains = vec![Mat::<T, NU, NX>::zeros(); n];
    let mut ff = vec![Vector::<T, NU>::zeros(); n];
    let mut value_hess = vec![Mat::<T, NX, NX>::zeros(); n + 1];
    let mut value_grad = vec![Vector::<T, NX>::zeros(); n + 1];
    value_hess[n] = terminal_hess.symmetrize();
    value_grad[n] = *terminal_grad;

    for k in (0..n).rev() {
        let s = &stages[k];
        let p = value_hess[k + 1];
        let pv = value_grad[k + 1] + p * s.d;
        let at = s.a.transpose();
        let bt = s.b.transpose();
        let qx = s.q + at * pv;
        let qu = s.r + bt * pv;
        let qxx = s.qxx + at * p * s.a;
        let quu = (s.ruu + bt * p * s.b).symmetrize();
        let qux = s.rux + bt * p * s.a;

        let mut gain = Mat::<T, NU, NX>::zeros();
        let mut kv = Vector::<T, NU>::zeros();
        match fixed[k] {
            [None, None] => {
                let quu_inv = inverse_spd2(&quu).ok_or(PtoError::SingularControlHessian { stage: k })?;
                gain = -(quu_inv * qux);
                kv = -(quu_inv * qu);
            }
            [Some(c0), Some(c1)] => {
                kv[0] = c0;
                kv[1] = c1;
            }
            [Some(c), None] | [None, Some(c)] => {
                let i = if fixed[k][0].is_some() { 0 } else { 1 };
                let j = 1 - i;
                let h = quu.0[j][j];
                if !(h > T::zero()) {
                    return Err(PtoError::SingularControlHessian { stage: k });
                }
                kv[i] = c;
                kv[j] = -(qu[j] + quu.0[j][i] * c) / h;
                for col in 0..NX {
                    gain.0[j][col] = -qux.0[j][col] / h;
                }
            }
        }
        let kt = gain.transpose();
        value_hess[k] = (qxx + kt * quu * gain + kt * qux + qux.transpose() * gain).symmetrize();
        value_grad[k] = qx + kt * quu * kv + kt * qu + qux.transpose() * kv;
        gains[k] = gain;
        ff[k] = kv;
    }

    let mut dx = vec![Vector::<T, NX>::zeros(); n + 1];
    let mut du = vec![Vector::<T, NU>::zeros(); n];
    for k in 0..n {
        let s = &stages[k];
        du[k] = gains[k] * dx[k] + ff[k];
        dx[k + 1] = s.a * dx[k] + s.b * du[k] + s.d;
    }
    let costate: Vec<_> = (0..=n).map(|k| value_grad[k] + value_hess[k] * dx[k]).collect();
    let grad_u = (0..n)
        .map(|k| {
            let s = &stages[k];
            s.r + s.ruu * du[k] + s.rux * dx[k] + s.b.transpose() * costate[k + 1]
        })
        .collect();
    Ok(Sweep { sol: QpSolution { dx, du, costate }, grad_u })
}

/// Next active set of a primal-dual active-set pass.
fn update_active<T: Scalar>(stages: &[StageQp<T>], sw: &Sweep<T>, fixed: &Fixed<T>) -> Fixed<T> {
    stages
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut next = [None; NU];
            for j in 0..NU {
                let (lo, hi) = (s.du_lo[j], s.du_hi[j]);
                let (du, g) = (sw.sol.du[k][j], sw.grad_u[k][j]);
                next[j] = match fixed[k][j] {
                    None if du < lo => Some(lo),
                    None if du > hi => Some(hi),
                    None => None,
                    Some(b) if lo >= hi => Some(b),
                    Some(b) if b == lo && g >= T::zero() => Some(b),
                    Some(b) if b == hi && g <= T::zero() => Some(b),
                    Some(_) => None,
                };
            }
            next
        })
        .collect()
}

/// Solves the box-constrained QP by primal-dual active-set passes over
/// Riccati sweeps. If the active set has not settled after
/// `MAX_ACTIVE_SET_PASSES`, the last input steps are projected onto the box
/// and the states are rolled out again.
pub fn solve_riccati<T: Scalar>(
    stages: &[StageQp<T>],
    terminal_grad: &Vector<T, NX>,
    terminal_hess: &Mat<T, NX, NX>,
) -> Result<QpSolution<T>> {
    let n = stages.len();
    let psd_tol = T::lit(1e-9);
    for (k, s) in stages.iter().enumerate() {
        if !stage_hessian(s).is_psd(psd_tol) {
            return Err(PtoError::NotPsd { stage: k });
        }
    }
    if !terminal_hess.is_psd(psd_tol) {
        return Err(PtoError::NotPsd { stage: n });
    }

    let mut fixed: Fixed<T> = vec![[None; NU]; n];
    let mut last = None;
    for _ in 0..MAX_ACTIVE_SET_PASSES {
        let sw = sweep(stages, terminal_grad, terminal_hess, &fixed)?;
        let next = update_active(stages, &sw, &fixed);
        if next == fixed {
            return Ok(sw.sol);
        }
        fixed = next;
        last = Some(sw);
    }
    let mut sol = last.expect("at least one pass").sol;
    for k in 0..n {
        let s = &stages[k];
        for j in 0..NU {
            sol.du[k][j] = sol.du[k][j].max(s.du_lo[j]).min(s.du_hi[j]);
        }
        sol.dx[k + 1] = s.a * sol.dx[k] + s.b * sol.du[k] + s.d;
    }
    Ok(sol)
}

/// The stacked 7x7 stage Hessian `[[Q, S^T], [S, R]]`.
pub(crate) fn stage_hessian<T: Scalar>(s: &StageQp<T>) -> Mat<T, NZ, NZ> {
    let mut h = Mat::zeros();
    for i in 0..NX {
        for j in 0..NX {
            h.0[i][j] = s.qxx.0[i][j];
        }
    }
    for i in 0..NU {
        for j in 0..NU {
            h.0[NX + i][NX + j] = s.ruu.0[i][j];
        }
        for j in 0..NX {
            h.0[NX + i][j] = s.rux.0[i][j];
            h.0[j][NX + i] = s.rux.0[i][j];
        }
    }
    h
}
