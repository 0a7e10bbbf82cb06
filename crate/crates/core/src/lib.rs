//! Centroidal state estimation for floating-base legged robots, driven by
//! joint-torque measurements fused with contact-constrained whole-body
//! dynamics in an EKF.
//!
//! The crate is organized around the pipeline the CLI wires together:
//!
//! * [`model`] — robot description (kinematic tree, inertias, foot frames)
//!   with a built-in 12-DoF quadruped default,
//! * [`kinodynamics`] — mass matrix, bias terms, Jacobians, centroidal
//!   momentum matrix,
//! * [`constrained_dynamics`] — nullspace-projected dynamics, torque-affine
//!   momentum rate, and a KKT forward-dynamics oracle,
//! * [`estimator`] — the 9-state EKF over CoM position and momenta,
//! * [`contact`] — torque-based contact detection,
//! * [`simlab`] — scripted scenarios, rigid-contact simulation, noise
//!   injection, and CSV log persistence,
//! * [`metrics`] — evaluation metrics for estimate traces.

pub mod constrained_dynamics;
pub mod contact;
pub mod estimator;
pub mod kinodynamics;
pub mod math;
pub mod metrics;
pub mod model;
pub mod simlab;

#[cfg(test)]
pub(crate) mod testutil;

pub use kinodynamics::{CentroidalState, ContactSet, GeneralizedState};
pub use model::{default_quadruped, load_model, RobotModel};
