//! Solvers for high-dimensional semilinear parabolic PDEs via their
//! backward stochastic differential equation (BSDE) representation.
//!
//! The crate provides two solvers over a shared neural rollout:
//!
//! * [`deep_bsde`] — the classic deep-BSDE baseline: the unknown initial
//!   value `u(0, X0)` is a trainable scalar weight, drawn from a guess
//!   interval and optimized jointly with the step subnetworks by Adam.
//! * [`deep_ga`] — a genetic-algorithm/Adam hybrid: a population of
//!   candidate initial values is evolved by selection, averaging
//!   crossover and bounded mutations, alternating with Adam iterations
//!   on the remaining network weights.
//!
//! Supporting modules cover seeded Brownian path simulation ([`paths`]),
//! the two benchmark problems ([`problems`]) — a nonlinear Black-Scholes
//! equation with default risk and an HJB equation from LQG control —
//! independent reference oracles ([`oracles`]), and a reporting layer
//! ([`report`], [`runner`]) that backs the benchmark CLI.

pub mod adam;
pub mod config;
pub mod deep_bsde;
pub mod deep_ga;
pub mod error;
pub mod net;
pub mod oracles;
pub mod paths;
pub mod problems;
pub mod report;
pub mod rng;
pub mod rollout;
pub mod runner;

pub use error::{Result, SolverError};
pub use paths::{sample_brownian, simulate_forward, BrownianBatch, PathBatch};
pub use problems::{BsParams, HjbParams, ProblemSpec};
pub use rollout::{Mode, RolloutResult, SolverParams};
