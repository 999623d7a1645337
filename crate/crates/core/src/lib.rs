//! Monte Carlo simulation of mean-reflected stochastic heat equations on
//! `[0, 1]` with Dirichlet boundary values, plus a harness that builds the
//! Girsanov coupling behind the quadratic transportation cost inequality and
//! checks the resulting bounds numerically.
//!
//! Module map:
//!
//! * [`kernel`]: Dirichlet heat kernel, its bounds, mild-form propagation.
//! * [`noise`]: Brownian-sheet increments, drift shifts, Girsanov densities.
//! * [`reflect`]: minimal pushes enforcing the mean constraint.
//! * [`solver`]: particle ensemble stepping and whole-run drivers.
//! * [`transport`]: coupling runs, empirical W2, concentration profiles.
//! * [`constants`]: log-domain evaluation of the transport constants.
//! * [`cli`]: configuration, orchestration and report files.

pub mod cli;
pub mod constants;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod noise;
pub mod reflect;
pub mod solver;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
pub use grid::SpaceTimeGrid;
