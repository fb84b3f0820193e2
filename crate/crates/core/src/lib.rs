//! Receding-horizon control of a four-degree-of-freedom underwater vehicle
//! in a box-shaped tank with spherical and pillar obstacles.
//!
//! The crate is organised bottom-up: vehicle [`dynamics`], ambient
//! [`current`] fields, [`workspace`] geometry, the optimal control problem
//! in [`ocp`], its [`solver`], and the closed-loop [`mission`] runner.
//! [`config`] loads JSON mission files and [`gradcheck`] verifies the
//! analytic derivatives against finite differences.

// `!(a > b)` is used on purpose so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod current;
pub mod dynamics;
pub mod error;
pub mod gradcheck;
pub mod mission;
pub mod ocp;
pub mod par;
pub mod solver;
pub mod workspace;

pub use config::ConfigFile;
pub use current::{CurrentField, CurrentGrid, CurrentSample, JetField};
pub use dynamics::{ThrustCommand, VehicleParams, VehicleState};
pub use error::{Error, Result};
pub use mission::{MissionConfig, MissionLog, Outcome};
pub use ocp::{ControlSequence, OcpProblem, TerminalRegion, Weights};
pub use par::Execution;
pub use solver::{OcpSolution, SolverConfig};
pub use workspace::{PlanarSpeedMode, Sphere, VelocityBounds, Workspace};
