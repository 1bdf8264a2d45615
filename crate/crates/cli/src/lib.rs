//! Experiment harness: dataset generation, solver and unrolled-network
//! runs, evaluation sweeps and complexity tables.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod io;
