//! Simulation core for scheduling experiments on stochastic edge-cloud
//! clusters: discrete 300-second intervals, four-dimensional host capacities,
//! normalized interval metrics, and a family of schedulers ranging from
//! regression heuristics to an asynchronous actor-critic over a residual
//! recurrent network.

pub mod csm;
pub mod error;
pub mod featurize;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod schedulers;
pub mod simulator;
pub mod workload;

pub use error::{Error, Result};
