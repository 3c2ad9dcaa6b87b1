//! Parallel trajectory optimization for lane-level motion planning.
//!
//! Each control cycle solves one multiple-shooting optimal control problem
//! per target lane, scores the feasible results and executes the first
//! control of the winner. Surrounding traffic follows the intelligent
//! driver model.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! closed-loop harness and file formats use `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod costs;
pub mod dynamics;
pub mod error;
pub mod evaluator;
pub mod harness;
pub mod linalg;
pub mod nlp;
pub mod planner;
pub mod scalar;
pub mod traffic;

pub use error::{PtoError, Result};
pub use scalar::Scalar;

pub type EvState64 = dynamics::EvState<f64>;
pub type EvState32 = dynamics::EvState<f32>;
pub type ControlInput64 = dynamics::ControlInput<f64>;
pub type ControlInput32 = dynamics::ControlInput<f32>;
pub type SvState64 = dynamics::SvState<f64>;
pub type SvState32 = dynamics::SvState<f32>;
pub type PlannerConfig64 = planner::PlannerConfig<f64>;
pub type PlannerConfig32 = planner::PlannerConfig<f32>;
pub type Scenario64 = traffic::Scenario<f64>;
pub type Solution64 = nlp::Solution<f64>;
pub type Solution32 = nlp::Solution<f32>;
