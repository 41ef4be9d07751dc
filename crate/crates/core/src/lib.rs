//! Data-driven tracking MPC for unknown linear systems.
//!
//! The controller never sees a model: predictions come from Hankel matrices built from
//! one measured input/output trajectory, and an artificial equilibrium lets the
//! closed loop converge to the best reachable approximation of any setpoint.

pub mod cli;
pub mod config;
pub mod data_io;
pub mod equilibria;
pub mod error;
pub mod hankel;
pub mod linalg;
pub mod lti;
pub mod mpc;
pub mod qp;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
