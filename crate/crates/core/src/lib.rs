//! Buildings-to-grid multi-timescale model predictive control.
//!
//! The crate couples a cluster of 3R-2C building thermal models with a
//! swing-equation descriptor model of the power network. Both are discretized
//! with Gear's backward differentiation formulas and optimized jointly as
//! sparse quadratic programs on two time scales.

pub mod error;
pub mod gear;
pub mod grid;
pub mod building;
pub mod controllers;
pub mod network;
pub mod profiles;
pub mod qp;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
