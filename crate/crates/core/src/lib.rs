//! Task-offloading optimization for simulated mobile-edge-computing fleets.
//!
//! Three optimizers share one objective ([`cost`]): baseline particle swarm
//! optimization ([`pso`]), adaptive PSO driven by evolutionary-state
//! estimation ([`apso`]), and a hybrid in which a Soft Actor-Critic agent
//! ([`sac`]) sets the swarm's acceleration coefficients every iteration
//! ([`controller`]). [`harness`] runs paired comparisons and writes reports.

pub mod apso;
pub mod controller;
pub mod cost;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pso;
pub mod rng;
pub mod sac;

pub use cost::{Assignment, CostBreakdown, CostModel, CostTable, FeasibilityMode, Weights};
pub use env::{generate_environment, EnvConfig, Environment};
pub use error::{Error, Result};
pub use pso::{Coefficients, PsoParams, RunResult, SwarmState};
