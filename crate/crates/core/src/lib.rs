//! Longitudinal control of an automated vehicle in mixed traffic.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix them to `f64`. Scenario handling, the simulation engine
//! and identification work in `f64` only.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod carfollow;
pub mod dynamics;
pub mod ident;
pub mod mpc;
pub mod predict;
pub mod presets;
pub mod reactive;
pub mod scalar;
pub mod simkit;

pub use scalar::Scalar;

pub type VehicleParams = dynamics::VehicleParams<f64>;
pub type VehicleState = dynamics::VehicleState<f64>;
pub type EnergyLedger = dynamics::EnergyLedger<f64>;
pub type RangePolicyParams = carfollow::RangePolicyParams<f64>;
pub type OvmParams = carfollow::OvmParams<f64>;
pub type IdmParams = carfollow::IdmParams<f64>;
pub type Prediction = predict::Prediction<f64>;
pub type MpcConfig = mpc::MpcConfig<f64>;
pub type QpProblem = mpc::qp::QpProblem<f64>;
pub type QpSolution = mpc::qp::QpSolution<f64>;
