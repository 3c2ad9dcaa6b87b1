//! Problem generators shared by the integration tests.
#![allow(dead_code)]

use pto_core::costs::{barrier_h, running_cost, CostWeights, DesiredState, BARRIER_DENOM_FLOOR, SAFETY_WEIGHT};
use pto_core::dynamics::{ControlInput, EvState, SvState, NU, NX};
use pto_core::nlp::{
    initialize, solve_sqp, transcribe, LaneTarget, OcpSettings, ShootingProblem, Solution, SolveMode, SolveStatus,
};
use rand::rngs::StdRng;
use rand::Rng;

pub struct Point {
    pub x: EvState<f64>,
    pub u: ControlInput<f64>,
    pub xd: DesiredState<f64>,
    pub svs: Vec<SvState<f64>>,
    pub t: f64,
}

pub fn random_point(rng: &mut StdRng) -> Point {
    let x = EvState::new(
        rng.random_range(-20.0..20.0),
        rng.random_range(-11.0..-1.0),
        rng.random_range(-0.3..0.3),
        rng.random_range(0.0..24.0),
        rng.random_range(-1.0..1.0),
    );
    let u = ControlInput::new(rng.random_range(-1.5..3.0), rng.random_range(-2.0..2.0));
    let lane = [-2.0, -6.0, -10.0][rng.random_range(0..3)];
    let xd = DesiredState::cruise(lane, 15.0);
    let m = rng.random_range(0..=3);
    let svs = (0..m)
        .map(|_| {
            SvState::new(
                x.px + rng.random_range(-15.0..15.0),
                [-2.0, -6.0, -10.0][rng.random_range(0..3)],
                rng.random_range(5.0..12.0),
                0.0,
            )
        })
        .collect();
    Point { x, u, xd, svs, t: rng.random_range(0.0..5.0) }
}

pub fn cost_at(p: &Point, z: &[f64; 7], w: &CostWeights<f64>) -> f64 {
    let x = EvState::new(z[0], z[1], z[2], z[3], z[4]);
    running_cost(&x, &ControlInput::new(z[5], z[6]), &p.xd, &p.svs, p.t, w)
}

// The safety measure switches over a band of width ~epsilon around h = c
// and has a kink where eta + h meets the floor; finite differences are
// meaningless there.
pub fn away_from_switches(p: &Point, w: &CostWeights<f64>) -> bool {
    p.svs.iter().all(|o| {
        let h = barrier_h((p.x.px, p.x.py), o, w);
        (h - w.c).abs() > 1e-3 && (w.eta + h - BARRIER_DENOM_FLOOR).abs() > 1e-3
    })
}

pub const LANES: [f64; 3] = [-2.0, -6.0, -10.0];

pub fn problem(
    x0: EvState<f64>,
    lateral: f64,
    svs: &[SvState<f64>],
    settings: &OcpSettings<f64>,
) -> ShootingProblem<f64> {
    transcribe(&LaneTarget { lateral, speed: 15.0 }, &x0, svs, settings).unwrap()
}

pub fn assert_converged_contract(p: &ShootingProblem<f64>, s: &Solution<f64>) {
    let vehicle = &p.settings.vehicle;
    let (ulo, uhi) = vehicle.control_bounds();
    let (xlo, xhi) = vehicle.state_bounds();
    assert_eq!(s.status, SolveStatus::Converged, "kkt {} after {}", s.kkt_residual, s.iterations);
    assert!(s.defect_norms.iter().all(|d| *d < 1e-6), "max defect {}", s.max_defect());
    for u in &s.vars.controls {
        let a = u.to_array();
        for i in 0..NU {
            assert!(a[i] >= ulo[i] && a[i] <= uhi[i], "control {i} = {}", a[i]);
        }
    }
    for x in &s.vars.states[1..] {
        let a = x.to_array();
        for i in 0..NX {
            assert!(a[i] >= xlo[i] - 1e-3 && a[i] <= xhi[i] + 1e-3, "state {i} = {}", a[i]);
        }
    }
}

pub fn random_problem(rng: &mut StdRng) -> ShootingProblem<f64> {
    let lane = rng.random_range(0..3usize);
    let x0 = EvState::new(
        0.0,
        LANES[lane] + rng.random_range(-0.3..0.3),
        rng.random_range(-0.02..0.02),
        rng.random_range(12.0..18.0),
        rng.random_range(-0.02..0.02),
    );
    let target = LANES[(lane as i64 + rng.random_range(-1..=1)).clamp(0, 2) as usize];
    let svs: Vec<_> = (0..rng.random_range(0..=3))
        .map(|_| {
            SvState::new(rng.random_range(-30.0..90.0), LANES[rng.random_range(0..3)], rng.random_range(8.0..12.0), 0.0)
        })
        .filter(|o| barrier_h((x0.px, x0.py), o, &CostWeights::standard(5.0)) > 8.0)
        .collect();
    problem(x0, target, &svs, &OcpSettings::standard(SAFETY_WEIGHT))
}

// One interval, weights only on the terminal speed and yaw rate. Both are
// affine in the inputs, so the optimum is a scalar least-squares problem
// per input, clamped to the box.
pub fn single_interval(v0: f64, w0: f64, vref: f64) -> (ShootingProblem<f64>, [f64; 2]) {
    let mut settings = OcpSettings::standard(0.0);
    settings.horizon = 1;
    let w = &mut settings.weights;
    w.q_terminal = [0.0, 0.0, 0.0, 3e6, 2e6];
    w.iota_terminal = [0.0, 0.0, 0.0, 1.0, 1.0];
    w.q_tracking = [0.0; 5];
    let (qv, qw, ra, rw) = (w.q_terminal[3], w.q_terminal[4], w.r[0], w.r[1]);
    let dt = settings.ts;
    let x0 = EvState::new(0.0, -6.0, 0.0, v0, w0);
    let p = transcribe(&LaneTarget { lateral: -6.0, speed: vref }, &x0, &[], &settings).unwrap();
    let (lo, hi) = settings.vehicle.control_bounds();
    let a = (-qv * (v0 - vref) * dt / (ra + qv * dt * dt)).clamp(lo[0], hi[0]);
    let wd = (-qw * w0 * dt / (rw + qw * dt * dt)).clamp(lo[1], hi[1]);
    (p, [a, wd])
}

pub fn converge(p: &ShootingProblem<f64>) -> Solution<f64> {
    solve_sqp(p, initialize(p, None), SolveMode::Converge).unwrap()
}

pub fn min_barrier(p: &ShootingProblem<f64>, s: &Solution<f64>) -> f64 {
    let w = &p.settings.weights;
    s.vars
        .states
        .iter()
        .enumerate()
        .flat_map(|(k, x)| p.sv_predictions[k].iter().map(move |o| barrier_h((x.px, x.py), o, w)))
        .fold(f64::INFINITY, f64::min)
}
