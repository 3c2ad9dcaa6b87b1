//! TOML scenario files.

use std::path::Path;

use serde::Deserialize;

use crate::costs::CostWeights;
use crate::dynamics::{ControlInput, EvState, SvState, VehicleParams};
use crate::error::{PtoError, Result};
use crate::evaluator::EvalWeights;
use crate::nlp::{OcpSettings, SolveMode, SqpSettings, STATE_PENALTY};
use crate::planner::{LaneSet, PlannerConfig, PlannerMode};
use crate::traffic::{IdmParams, Scenario, SvAgent};

/// The dense three-lane scenario shipped with the crate.
pub const PAPER_S4: &str = include_str!("../../scenarios/paper_s4.scenario");

/// Scenarios addressable by name instead of path.
pub const BUNDLED: &[(&str, &str)] = &[("paper_s4", PAPER_S4), ("paper_s4.scenario", PAPER_S4)];

/// A parsed scenario together with the planner configuration it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario<f64>,
    pub planner: PlannerConfig<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRoot {
    sim: FileSim,
    lanes: LaneSet<f64>,
    ev: FileEv,
    #[serde(default)]
    idm: FileIdm,
    #[serde(default)]
    sv: Vec<FileSv>,
    planner: FilePlanner,
    weights: FileWeights,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSim {
    duration: f64,
    period: f64,
    perception_count: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEv {
    initial_state: Option<[f64; 5]>,
    #[serde(default)]
    initial_control: [f64; 2],
    wheelbase: f64,
    v: [f64; 2],
    theta: [f64; 2],
    omega: [f64; 2],
    a: [f64; 2],
    omega_dot: [f64; 2],
    py: [f64; 2],
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct FileIdm {
    a_max: Option<f64>,
    b_comfort: Option<f64>,
    s0: Option<f64>,
    time_headway: Option<f64>,
    delta: Option<f64>,
    max_decel: Option<f64>,
    vehicle_length: Option<f64>,
}

impl FileIdm {
    fn apply(&self, base: IdmParams<f64>) -> IdmParams<f64> {
        IdmParams {
            a_max: self.a_max.unwrap_or(base.a_max),
            b_comfort: self.b_comfort.unwrap_or(base.b_comfort),
            s0: self.s0.unwrap_or(base.s0),
            time_headway: self.time_headway.unwrap_or(base.time_headway),
            delta: self.delta.unwrap_or(base.delta),
            max_decel: self.max_decel.unwrap_or(base.max_decel),
            vehicle_length: self.vehicle_length.unwrap_or(base.vehicle_length),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSv {
    id: usize,
    state: [f64; 4],
    target_speed: f64,
    idm: Option<FileIdm>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FilePlanner {
    #[serde(default = "default_mode")]
    mode: PlannerMode,
    #[serde(default = "default_solve_mode")]
    solve_mode: SolveMode,
    horizon_steps: usize,
    ts: f64,
    speed_fractions: [f64; 4],
    #[serde(default = "default_rti")]
    rti_iterations: usize,
    #[serde(default = "default_penalty")]
    state_penalty: f64,
}

fn default_mode() -> PlannerMode {
    PlannerMode::Pto3
}
fn default_solve_mode() -> SolveMode {
    SolveMode::RealTimeIteration
}
fn default_rti() -> usize {
    SqpSettings::default().rti_iterations
}
fn default_penalty() -> f64 {
    STATE_PENALTY
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileWeights {
    q_terminal: [f64; 5],
    iota_terminal: [f64; 5],
    q_tracking: [f64; 5],
    iota_tracking: [f64; 5],
    r: [f64; 2],
    lambda: Vec<f64>,
    gamma: f64,
    eta: f64,
    epsilon: f64,
    c: f64,
    ellipse_a: f64,
    ellipse_b: f64,
    metric: [f64; 4],
    n_c: usize,
    gamma_g: f64,
    gamma_l: f64,
    gamma_c: f64,
    v_goal: f64,
}

fn invalid(e: PtoError) -> PtoError {
    match e {
        PtoError::InvalidConfig(m) => PtoError::Validation(m),
        other => other,
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let root: FileRoot = toml::from_str(text).map_err(|e| PtoError::Parse(e.to_string()))?;
    let f = root.ev;
    let x0 = f.initial_state.ok_or_else(|| PtoError::Validation("ev.initial_state is required".into()))?;
    let vehicle = VehicleParams {
        wheelbase: f.wheelbase,
        v_min: f.v[0],
        v_max: f.v[1],
        theta_min: f.theta[0],
        theta_max: f.theta[1],
        omega_min: f.omega[0],
        omega_max: f.omega[1],
        a_min: f.a[0],
        a_max: f.a[1],
        omega_dot_min: f.omega_dot[0],
        omega_dot_max: f.omega_dot[1],
        py_min: f.py[0],
        py_max: f.py[1],
    };
    let lanes = root.lanes;
    lanes.check().map_err(invalid)?;

    let base_idm = root.idm.apply(IdmParams::default());
    let mut agents = Vec::with_capacity(root.sv.len());
    for s in &root.sv {
        if s.state[3] != 0.0 {
            return Err(PtoError::Validation(format!("sv {}: lateral speed must be zero", s.id)));
        }
        let lane = lanes.nearest(s.state[1]);
        if (s.state[1] - lanes.center(lane)).abs() > lanes.width / 2.0 {
            return Err(PtoError::Validation(format!("sv {}: not inside any lane", s.id)));
        }
        agents.push(SvAgent {
            id: s.id,
            state: SvState::new(s.state[0], s.state[1], s.state[2], s.state[3]),
            v0: s.target_speed,
            lane,
            idm: s.idm.map_or(base_idm, |o| o.apply(base_idm)),
        });
    }

    let scenario = Scenario {
        lanes,
        ev_initial: EvState::from_array(x0),
        ev_initial_control: ControlInput::from_array(f.initial_control),
        agents,
        duration: root.sim.duration,
        period: root.sim.period,
        perception_count: root.sim.perception_count,
    };
    scenario.check().map_err(invalid)?;

    let w = root.weights;
    let p = root.planner;
    let planner = PlannerConfig {
        mode: p.mode,
        ocp: OcpSettings {
            horizon: p.horizon_steps,
            ts: p.ts,
            weights: CostWeights {
                q_terminal: w.q_terminal,
                iota_terminal: w.iota_terminal,
                q_tracking: w.q_tracking,
                iota_tracking: w.iota_tracking,
                r: w.r,
                lambda: w.lambda,
                gamma: w.gamma,
                eta: w.eta,
                epsilon: w.epsilon,
                c: w.c,
                ellipse_a: w.ellipse_a,
                ellipse_b: w.ellipse_b,
            },
            vehicle,
            state_penalty: p.state_penalty,
        },
        eval: EvalWeights {
            w: w.metric,
            n_c: w.n_c,
            gamma_g: w.gamma_g,
            gamma_l: w.gamma_l,
            gamma_c: w.gamma_c,
            v_goal: w.v_goal,
        },
        speed_fractions: p.speed_fractions,
        solve_mode: p.solve_mode,
        sqp: SqpSettings { rti_iterations: p.rti_iterations, ..SqpSettings::default() },
    };
    planner.check(&scenario.lanes).map_err(invalid)?;
    if (scenario.period - planner.ocp.ts).abs() > 1e-12 {
        return Err(PtoError::Validation("sim.period must equal planner.ts".into()));
    }
    if p.rti_iterations == 0 {
        return Err(PtoError::Validation("planner.rti_iterations must be >= 1".into()));
    }
    Ok(ScenarioConfig { scenario, planner })
}

/// Reads a scenario from `path`, or from the bundled set when `path` names
/// one and no such file exists.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| Path::new(name) == path) {
            return parse_scenario(text);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| PtoError::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}
