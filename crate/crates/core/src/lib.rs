//! Stochastic nested ADMM for nonconvex, linearly constrained two-level
//! composition problems.

pub mod checks;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod generators;
pub mod linalg;
pub mod problem;
pub mod prox;
pub mod solver;

pub use error::{Error, Result};
