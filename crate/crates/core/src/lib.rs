//! Geometric calibration of serial kinematic chains from plane-contact
//! measurements, with information-ranked posture selection.
//!
//! The pipeline: generate contact postures ([`posegen`]), reduce the
//! parameter set to identifiable base parameters ([`identifiability`]), pick
//! informative postures ([`design`]), then estimate the base parameters by
//! nonlinear least squares ([`calibrate`]). [`simulator`] provides synthetic
//! scenarios with a known answer.

pub mod calibrate;
pub mod design;
mod error;
pub mod identifiability;
pub mod io;
pub mod kinematics;
pub mod linalg;
pub mod params;
pub mod posegen;
pub mod residual;
pub mod simulator;

pub use error::{Error, Result};
pub use kinematics::{forward_kinematics, JointConfig, JointPlacement, KinematicChain, Pose};
pub use params::{ParameterVector, PlaneParams};
pub use residual::{plane_residual, stack_residuals, Dataset, ResidualTriple};
