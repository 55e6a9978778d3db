//! Gaussian Whittle-Matern fields on compact metric graphs.
//!
//! This crate implements exact, sparse-matrix based inference for the Markov
//! orders `alpha = 1` (exponential-type fields) and `alpha = 2` (once
//! differentiable fields): closed-form covariance kernels, precision
//! assembly under Kirchhoff vertex conditions, likelihood evaluation,
//! kriging prediction, exact simulation, maximum-likelihood estimation,
//! proper scoring rules, and a graph-Laplacian baseline.
//!
//! The `oracles` module contains independent reference implementations
//! (spectral series, finite differences, dense conditioning) that are used
//! by the test and acceptance suites only; they deliberately share no code
//! with the production evaluators.

pub mod assembly;
pub mod bench;
pub mod constrained;
pub mod error;
pub mod estimate;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod kriging;
pub mod laplacian;
pub mod likelihood;
pub mod oracles;
pub mod scores;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
pub use graph::{Location, MetricGraph};
// kernels re-exports added with the module

