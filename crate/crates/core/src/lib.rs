//! Risk-sensitive reachability for finite-horizon stochastic systems.
//!
//! The crate computes a CVaR Markov decision process value function on an
//! augmented (state, confidence level) grid, extracts risk-sensitive safe sets
//! and their under-approximations, and checks the results against exact CVaR,
//! expectation dynamic programming and Monte Carlo oracles. The stormwater
//! retention pond ships as the reference benchmark.

pub mod cli;
pub mod envelope;
pub mod error;
pub mod grid;
pub mod model;
pub mod monte_carlo;
pub mod oracles;
pub mod risk;
pub mod rng;
pub mod safe_sets;
pub mod simplex;
pub mod validation;
pub mod value_iteration;

pub use error::{Error, Result};
