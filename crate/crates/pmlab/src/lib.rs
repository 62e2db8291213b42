//! Simulation and analysis toolkit for cost-function-based prediction markets
//! with exponential-utility traders.
//!
//! The library computes market-clearing and market-maker equilibria, simulates
//! trade as randomized block-coordinate descent on the market potential, and
//! quantifies the three-way decomposition of forecast error (sampling error,
//! market-maker bias, convergence error) with closed-form asymptotic bounds.

// Guards written as !(x > 0.0) intentionally reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod cost;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod expfam;
pub mod experiments;
pub mod linops;
pub mod market;

pub use error::{Error, Result};
