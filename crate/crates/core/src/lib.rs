//! Amortized cost estimation for generalized Bayesian inference.
//!
//! A regression network `f(θ, x_t)` is trained to predict the expected
//! distance `E_{p(x|θ)}[d(x, x_t)]` between simulator output and a target
//! datapoint. Once trained, generalized posteriors
//! `p(θ | x_o) ∝ exp(−β · f(θ, x_o)) · p(θ)` can be sampled with MCMC for any
//! observation without further simulation.
//!
//! Modules:
//! - [`nn`]: dense residual MLP, set embedding, backprop, Adam, regression fitting
//! - [`tasks`]: benchmark simulators, priors and true-cost oracles
//! - [`distance`]: MSE, MMD² and energy distance
//! - [`targets`]: target-set construction and training-pair sampling
//! - [`ace`]: the cost network wrapper tying the above together
//! - [`gbi`]: potentials, slice sampling, ground-truth samplers, kernel ABC
//! - [`metrics`]: predictive distance, C2ST, cost accuracy, benchmark runner
//! - [`io`]: on-disk formats

pub mod ace;
pub mod distance;
pub mod error;
pub mod gbi;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod targets;
pub mod tasks;

pub use error::{Error, Result};
