//! Mesh-free PDE solving by residual minimization.
//!
//! A gated scalar network is trained to satisfy a PDE by minimizing the
//! squared residual of the differential operator on randomly sampled
//! space-time points, together with terminal/initial-condition and optional
//! penalty terms. Classical finite-difference and Monte-Carlo solvers plus
//! closed-form solutions act as independent oracles for every case study.

pub mod algebra;
pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod network;
pub mod problems;
pub mod report;
pub mod residuals;
pub mod sampling;
pub mod training;
pub mod util;

pub use error::{DgmError, Result};
