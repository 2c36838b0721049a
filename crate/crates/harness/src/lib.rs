//! Experiment harness: configuration, the interval loop, artifact emission,
//! run comparison, and the agent-scaling measurement.

pub mod config;
pub mod report;
pub mod runner;
pub mod scaling;
