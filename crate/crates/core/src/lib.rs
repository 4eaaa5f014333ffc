//! Model identification and autopilot design for torpedo-shaped AUVs.
//!
//! The crate covers the whole design loop: a parameterized 6-DOF vehicle
//! model ([`dynamics`], [`kinematics`]), thruster modeling and surge-test
//! regression ([`actuators`], [`regression`]), staged coefficient
//! identification against trajectory logs ([`identification`]),
//! line-of-sight waypoint guidance ([`guidance`]), gain-scheduled PID control
//! ([`controller`]) and envelope-based gain tuning ([`tuning`]).

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuators;
pub mod autopilot;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod guidance;
pub mod identification;
pub mod kinematics;
pub mod regression;
pub mod simulator;
pub mod tuning;

pub use error::{Error, Result};
