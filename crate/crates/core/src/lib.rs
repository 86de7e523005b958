//! Dynamic state estimation for a single-machine power system under
//! measurement attacks.
//!
//! The crate simulates a fourth-order synchronous machine connected to an
//! infinite bus, estimates its states with three nonlinear Kalman filters
//! (extended, cubature, and square-root cubature), optionally corrupts the
//! torque measurement with cyber attacks (random signal, denial of service,
//! replay, false data injection) or a reactance fault, and monitors the
//! innovations with χ² and windowed-Euclidean detectors.

pub mod attack;
pub mod detect;
pub mod error;
pub mod filters;
pub mod linalg;
pub mod machine;
pub mod presets;
pub mod scenario;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
