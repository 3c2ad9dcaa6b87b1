//! Surrounding traffic: intelligent-driver-model car following and the
//! ego vehicle's nearest-neighbour perception.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, EvState, SvState};
use crate::error::{PtoError, Result};
use crate::planner::LaneSet;
use crate::scalar::Scalar;

/// Half width of the ego vehicle body, used to decide which lanes it blocks.
pub const EV_HALF_WIDTH: f64 = 1.0;

/// Smallest gap fed to the IDM interaction term.
const MIN_GAP: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams<T> {
    pub a_max: T,
    pub b_comfort: T,
    /// Jam distance `s0` (m).
    pub s0: T,
    pub time_headway: T,
    pub delta: T,
    /// Largest deceleration the model may command (positive, m/s²).
    pub max_decel: T,
    /// Nominal length subtracted from center distances to get gaps.
    pub vehicle_length: T,
}

impl<T: Scalar> Default for IdmParams<T> {
    fn default() -> Self {
        IdmParams {
            a_max: T::lit(1.5),
            b_comfort: T::lit(2.0),
            s0: T::lit(2.0),
            time_headway: T::lit(1.5),
            delta: T::lit(4.0),
            max_decel: T::lit(9.0),
            vehicle_length: T::lit(5.0),
        }
    }
}

impl<T: Scalar> IdmParams<T> {
    pub fn check(&self) -> Result<()> {
        let all = [self.a_max, self.b_comfort, self.s0, self.time_headway, self.delta, self.max_decel];
        if !all.iter().all(|p| *p > T::zero() && p.is_finite()) || !(self.vehicle_length >= T::zero()) {
            return Err(PtoError::InvalidConfig("IDM parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvAgent<T> {
    pub id: usize,
    pub state: SvState<T>,
    /// Desired speed `v0` (m/s).
    pub v0: T,
    pub lane: usize,
    pub idm: IdmParams<T>,
}

impl<T: Scalar> SvAgent<T> {
    pub fn check(&self) -> Result<()> {
        if !(self.v0 > T::zero()) || !self.state.is_finite() {
            return Err(PtoError::InvalidConfig(format!("SV {}: target speed must be positive", self.id)));
        }
        self.idm.check()
    }
}

/// Everything the closed loop needs besides the planner configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario<T> {
    pub lanes: LaneSet<T>,
    pub ev_initial: EvState<T>,
    pub ev_initial_control: ControlInput<T>,
    pub agents: Vec<SvAgent<T>>,
    /// Simulated time (s).
    pub duration: T,
    /// Control period (s).
    pub period: T,
    /// Number of SVs the ego vehicle perceives.
    pub perception_count: usize,
}

impl<T: Scalar> Scenario<T> {
    pub fn check(&self) -> Result<()> {
        self.lanes.check()?;
        if !(self.duration > T::zero()) || !(self.period > T::zero()) {
            return Err(PtoError::InvalidConfig("duration and period must be positive".into()));
        }
        if !self.ev_initial.is_finite() || !self.ev_initial_control.is_finite() {
            return Err(PtoError::InvalidConfig("EV initial state must be finite".into()));
        }
        for (j, a) in self.agents.iter().enumerate() {
            a.check()?;
            if self.agents[..j].iter().any(|b| b.id == a.id) {
                return Err(PtoError::InvalidConfig(format!("duplicate SV id {}", a.id)));
            }
            if a.lane >= self.lanes.len() {
                return Err(PtoError::InvalidConfig(format!("SV {}: lane out of range", a.id)));
            }
        }
        Ok(())
    }

    /// Number of control cycles covering the duration.
    pub fn cycles(&self) -> usize {
        (self.duration / self.period).to_f64_lossy().round().max(1.0) as usize
    }
}

/// IDM acceleration for speed `v`, closing speed `dv` and gap `s`; pass an
/// infinite gap when there is no leader.
pub fn idm_accel<T: Scalar>(v: T, dv: T, s: T, agent: &SvAgent<T>) -> T {
    let p = &agent.idm;
    let s_star = (p.s0 + v * p.time_headway + v * dv / (T::lit(2.0) * (p.a_max * p.b_comfort).sqrt())).max(T::zero());
    let s = s.max(T::lit(MIN_GAP));
    let interaction = if s.is_finite() { (s_star / s).powi(2) } else { T::zero() };
    let free = (v.max(T::zero()) / agent.v0).powf(p.delta);
    (p.a_max * (T::one() - free - interaction)).max(-p.max_decel).min(p.a_max)
}

fn ev_occupies<T: Scalar>(ev: &EvState<T>, lanes: &LaneSet<T>, lane: usize) -> bool {
    (ev.py - lanes.center(lane)).abs() < lanes.width / T::lit(2.0) + T::lit(EV_HALF_WIDTH)
}

/// Gap and closing speed to the nearest vehicle ahead of `agents[j]` in its lane.
fn leader<T: Scalar>(j: usize, agents: &[SvAgent<T>], ev: Option<&EvState<T>>, lanes: &LaneSet<T>) -> (T, T) {
    let me = &agents[j];
    let mut best: Option<(T, T)> = None;
    let mut consider = |x: T, v: T| {
        let d = x - me.state.ox;
        if d > T::zero() && best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, v));
        }
    };
    for (k, other) in agents.iter().enumerate() {
        if k != j && other.lane == me.lane {
            consider(other.state.ox, other.state.ovx);
        }
    }
    if let Some(ev) = ev.filter(|ev| ev_occupies(ev, lanes, me.lane)) {
        consider(ev.px, ev.v * ev.theta.cos());
    }
    match best {
        Some((d, v)) => (d - me.idm.vehicle_length, me.state.ovx - v),
        None => (T::infinity(), T::zero()),
    }
}

/// Advances all agents by `dt` with explicit Euler. Leaders are evaluated at
/// the start of the step; the EV acts as a leader in every lane it overlaps.
pub fn step_traffic<T: Scalar>(
    agents: &[SvAgent<T>],
    ev: Option<&EvState<T>>,
    lanes: &LaneSet<T>,
    dt: T,
) -> Vec<SvAgent<T>> {
    (0..agents.len())
        .map(|j| {
            let a = &agents[j];
            let (gap, dv) = leader(j, agents, ev, lanes);
            let acc = idm_accel(a.state.ovx, dv, gap, a);
            let mut next = *a;
            next.state.ox = a.state.ox + a.state.ovx * dt;
            next.state.ovx = (a.state.ovx + acc * dt).max(T::zero());
            next
        })
        .collect()
}

/// Indices of the `m` agents closest to the EV, ties broken by index.
pub fn perceive_nearest_indices<T: Scalar>(ev: &EvState<T>, agents: &[SvAgent<T>], m: usize) -> Vec<usize> {
    let dist = |a: &SvAgent<T>| (a.state.ox - ev.px).hypot(a.state.oy - ev.py);
    let mut idx: Vec<usize> = (0..agents.len()).collect();
    idx.sort_by(|&i, &j| {
        dist(&agents[i]).partial_cmp(&dist(&agents[j])).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    idx.truncate(m);
    idx
}

pub fn perceive_nearest<T: Scalar>(ev: &EvState<T>, agents: &[SvAgent<T>], m: usize) -> Vec<SvState<T>> {
    perceive_nearest_indices(ev, agents, m).into_iter().map(|i| agents[i].state).collect()
}
