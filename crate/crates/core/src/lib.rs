//! Relaxed and singular stochastic control: simulation, adjoint equations,
//! maximum-principle checks and a Frank–Wolfe optimizer over Monte Carlo
//! scenarios.

pub mod adjoint;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod finance;
pub mod maxprinciple;
pub mod measures;
pub mod optimizer;
pub mod par;
pub mod problem;
pub mod regression;

pub use error::{Error, Result};
