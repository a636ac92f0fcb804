//! Deterministic simulator for asynchronous federated learning with bounded
//! staleness, delay-adjusted step sizes and empirical checks of the
//! accompanying convergence bounds.

pub mod data;
pub mod delay;
pub mod error;
pub mod metrics;
pub mod model;
pub mod orchestrator;
pub mod params;
pub mod seed;
pub mod theory;
pub mod trainer;

pub use error::{AflError, Result};
