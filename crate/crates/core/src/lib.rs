//! Particle-based stochastic variational Bayesian inference.
//!
//! Each scalar variable carries a weighted particle set. [`solver`] runs the
//! parallel stochastic iteration, [`unfolding`] unrolls it into a network
//! with trainable step sizes, and [`oracle`] holds brute-force references.

pub mod complexity;
pub mod error;
pub mod exec;
pub mod models;
pub mod oracle;
pub mod particles;
pub mod rng;
pub mod sampling;
pub mod solver;
pub mod unfolding;

pub use error::{Error, Result};
pub use exec::Execution;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
