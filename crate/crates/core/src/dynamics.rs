//! Ego-vehicle kinematics, integration and surrounding-vehicle prediction.
//!
//! The ego state is `[px, py, theta, v, omega]` driven by
//! `[a, omega_dot]`; the yaw rate is a state so the steering angle never
//! enters the dynamics directly.

use serde::{Deserialize, Serialize};

use crate::linalg::{Mat, Vector};
use crate::scalar::{wrap_angle, Scalar};

pub const NX: usize = 5;
pub const NU: usize = 2;

/// Ego-vehicle state. `theta` is kept wrapped to `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EvState<T> {
    pub px: T,
    pub py: T,
    pub theta: T,
    pub v: T,
    pub omega: T,
}

/// `[a, omega_dot]`, held constant over one sampling interval.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub a: T,
    pub omega_dot: T,
}

/// Surrounding vehicle position and velocity.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct SvState<T> {
    pub ox: T,
    pub oy: T,
    pub ovx: T,
    pub ovy: T,
}

/// Time derivative of an [`EvState`], in array form.
pub type StateDerivative<T> = [T; NX];

/// Element of the state tangent space: a plain 5-vector whose heading
/// component is wrapped to `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StateTangent<T>(pub [T; NX]);

impl<T: Scalar> StateTangent<T> {
    pub fn zero() -> Self {
        StateTangent([T::zero(); NX])
    }

    pub fn norm_inf(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn norm_1(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m + v.abs())
    }

    pub fn as_vector(&self) -> Vector<T, NX> {
        Vector::from_array(self.0)
    }
}

impl<T: Scalar> EvState<T> {
    pub fn new(px: T, py: T, theta: T, v: T, omega: T) -> Self {
        EvState { px, py, theta: wrap_angle(theta), v, omega }
    }

    pub fn from_array(a: [T; NX]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(&self) -> [T; NX] {
        [self.px, self.py, self.theta, self.v, self.omega]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Retraction: adds a tangent step and re-wraps the heading.
    pub fn plus(&self, dx: &[T; NX]) -> Self {
        let a = self.to_array();
        Self::new(a[0] + dx[0], a[1] + dx[1], a[2] + dx[2], a[3] + dx[3], a[4] + dx[4])
    }

    pub fn cast<U: Scalar>(&self) -> EvState<U> {
        let c = |x: T| U::lit(x.to_f64_lossy());
        EvState::new(c(self.px), c(self.py), c(self.theta), c(self.v), c(self.omega))
    }
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(a: T, omega_dot: T) -> Self {
        ControlInput { a, omega_dot }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn to_array(&self) -> [T; NU] {
        [self.a, self.omega_dot]
    }

    pub fn from_array(a: [T; NU]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.omega_dot.is_finite()
    }
}

impl<T: Scalar> SvState<T> {
    pub fn new(ox: T, oy: T, ovx: T, ovy: T) -> Self {
        SvState { ox, oy, ovx, ovy }
    }

    pub fn is_finite(&self) -> bool {
        self.ox.is_finite() && self.oy.is_finite() && self.ovx.is_finite() && self.ovy.is_finite()
    }
}

/// Wheelbase plus the box limits on state and control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams<T> {
    pub wheelbase: T,
    pub v_min: T,
    pub v_max: T,
    pub theta_min: T,
    pub theta_max: T,
    pub omega_min: T,
    pub omega_max: T,
    pub a_min: T,
    pub a_max: T,
    pub omega_dot_min: T,
    pub omega_dot_max: T,
    pub py_min: T,
    pub py_max: T,
}

impl<T: Scalar> VehicleParams<T> {
    /// Vehicle limits of the three-lane cruise scenario. The wheelbase is
    /// only used to report a steering angle.
    pub fn standard() -> Self {
        let l = T::lit;
        VehicleParams {
            wheelbase: l(2.7),
            v_min: l(0.0),
            v_max: l(24.0),
            theta_min: l(-0.227),
            theta_max: l(0.227),
            omega_min: l(-5.0),
            omega_max: l(5.0),
            a_min: l(-1.5),
            a_max: l(3.0),
            omega_dot_min: l(-2.0),
            omega_dot_max: l(2.0),
            py_min: l(-10.5),
            py_max: l(-1.5),
        }
    }

    /// Lower/upper state bounds; `px` is unbounded.
    pub fn state_bounds(&self) -> ([T; NX], [T; NX]) {
        (
            [T::neg_infinity(), self.py_min, self.theta_min, self.v_min, self.omega_min],
            [T::infinity(), self.py_max, self.theta_max, self.v_max, self.omega_max],
        )
    }

    pub fn control_bounds(&self) -> ([T; NU], [T; NU]) {
        ([self.a_min, self.omega_dot_min], [self.a_max, self.omega_dot_max])
    }

    pub fn clamp_control(&self, u: ControlInput<T>) -> ControlInput<T> {
        ControlInput::new(
            u.a.max(self.a_min).min(self.a_max),
            u.omega_dot.max(self.omega_dot_min).min(self.omega_dot_max),
        )
    }

    /// Returns the name of the first pair with `min >= max`.
    pub fn check(&self) -> Result<(), &'static str> {
        let pairs = [
            ("v", self.v_min, self.v_max),
            ("theta", self.theta_min, self.theta_max),
            ("omega", self.omega_min, self.omega_max),
            ("a", self.a_min, self.a_max),
            ("omega_dot", self.omega_dot_min, self.omega_dot_max),
            ("py", self.py_min, self.py_max),
        ];
        for (name, lo, hi) in pairs {
            if !(lo < hi) {
                return Err(name);
            }
        }
        if !(self.wheelbase > T::zero()) {
            return Err("wheelbase");
        }
        Ok(())
    }

    /// Front-wheel steering angle `atan(omega L / v)`, with `v` floored at
    /// 0.1 m/s.
    pub fn steering_angle(&self, x: &EvState<T>) -> T {
        let v = x.v.max(T::lit(0.1));
        (x.omega * self.wheelbase / v).atan()
    }
}

/// Continuous-time kinematic bicycle model.
pub fn bicycle_ode<T: Scalar>(x: &EvState<T>, u: &ControlInput<T>) -> StateDerivative<T> {
    [x.v * x.theta.cos(), x.v * x.theta.sin(), x.omega, u.a, u.omega_dot]
}

// Derivative on raw arrays, without heading wrap, for the RK4 stages.
fn ode_raw<T: Scalar>(x: &[T; NX], u: &[T; NU]) -> [T; NX] {
    [x[3] * x[2].cos(), x[3] * x[2].sin(), x[4], u[0], u[1]]
}

fn ode_jac_x<T: Scalar>(x: &[T; NX]) -> Mat<T, NX, NX> {
    let (s, c) = x[2].sin_cos();
    let mut j = Mat::zeros();
    j.0[0][2] = -x[3] * s;
    j.0[0][3] = c;
    j.0[1][2] = x[3] * c;
    j.0[1][3] = s;
    j.0[2][4] = T::one();
    j
}

fn ode_jac_u<T: Scalar>() -> Mat<T, NX, NU> {
    let mut j = Mat::zeros();
    j.0[3][0] = T::one();
    j.0[4][1] = T::one();
    j
}

fn axpy<T: Scalar>(x: &[T; NX], h: T, k: &[T; NX]) -> [T; NX] {
    let mut out = *x;
    for i in 0..NX {
        out[i] = out[i] + h * k[i];
    }
    out
}

/// One classic RK4 step with zero-order-hold control.
pub fn rk4_step<T: Scalar>(x: &EvState<T>, u: &ControlInput<T>, dt: T) -> EvState<T> {
    let x0 = x.to_array();
    let ua = u.to_array();
    let half = dt * T::lit(0.5);
    let k1 = ode_raw(&x0, &ua);
    let k2 = ode_raw(&axpy(&x0, half, &k1), &ua);
    let k3 = ode_raw(&axpy(&x0, half, &k2), &ua);
    let k4 = ode_raw(&axpy(&x0, dt, &k3), &ua);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let mut out = x0;
    for i in 0..NX {
        out[i] = out[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    EvState::from_array(out)
}

/// RK4 step plus its exact sensitivities `(d x+/d x, d x+/d u)`.
pub fn rk4_step_with_jacobians<T: Scalar>(
    x: &EvState<T>,
    u: &ControlInput<T>,
    dt: T,
) -> (EvState<T>, Mat<T, NX, NX>, Mat<T, NX, NU>) {
    let x0 = x.to_array();
    let ua = u.to_array();
    let half = dt * T::lit(0.5);
    let eye = Mat::<T, NX, NX>::identity();
    let ju = ode_jac_u::<T>();

    let k1 = ode_raw(&x0, &ua);
    let dk1x = ode_jac_x(&x0);
    let dk1u = ju;

    let x2 = axpy(&x0, half, &k1);
    let k2 = ode_raw(&x2, &ua);
    let j2 = ode_jac_x(&x2);
    let dk2x = j2 * (eye + dk1x.scale(half));
    let dk2u = j2 * dk1u.scale(half) + ju;

    let x3 = axpy(&x0, half, &k2);
    let k3 = ode_raw(&x3, &ua);
    let j3 = ode_jac_x(&x3);
    let dk3x = j3 * (eye + dk2x.scale(half));
    let dk3u = j3 * dk2u.scale(half) + ju;

    let x4 = axpy(&x0, dt, &k3);
    let k4 = ode_raw(&x4, &ua);
    let j4 = ode_jac_x(&x4);
    let dk4x = j4 * (eye + dk3x.scale(dt));
    let dk4u = j4 * dk3u.scale(dt) + ju;

    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let mut out = x0;
    for i in 0..NX {
        out[i] = out[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    let a = eye + (dk1x + dk2x.scale(two) + dk3x.scale(two) + dk4x).scale(sixth);
    let b = (dk1u + dk2u.scale(two) + dk3u.scale(two) + dk4u).scale(sixth);
    (EvState::from_array(out), a, b)
}

/// Manifold difference `a - b` with the heading component wrapped.
pub fn state_diff<T: Scalar>(a: &EvState<T>, b: &EvState<T>) -> StateTangent<T> {
    StateTangent([a.px - b.px, a.py - b.py, wrap_angle(a.theta - b.theta), a.v - b.v, a.omega - b.omega])
}

/// Constant-velocity prediction `t` seconds ahead.
pub fn predict_sv<T: Scalar>(o: &SvState<T>, t: T) -> SvState<T> {
    SvState { ox: o.ox + o.ovx * t, oy: o.oy + o.ovy * t, ovx: o.ovx, ovy: o.ovy }
}

/// Integrates `controls` from `x0`; returns `controls.len() + 1` states.
pub fn rollout<T: Scalar>(x0: &EvState<T>, controls: &[ControlInput<T>], dt: T) -> Vec<EvState<T>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*x0);
    let mut x = *x0;
    for u in controls {
        x = rk4_step(&x, u, dt);
        states.push(x);
    }
    states
}
