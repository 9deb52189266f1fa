//! Variational learning of filter analysis maps.
//!
//! The crate learns the parameters of an analysis step (a frozen Kalman gain,
//! or the inflation and localization of a square-root ensemble Kalman filter)
//! by minimizing a KL-plus-expected-negative-log-likelihood objective summed
//! over an observation record. It ships three benchmark systems (a stable
//! random linear map, Lorenz '96 and Kuramoto–Sivashinsky), the filters that
//! act on them, gradient machinery for the objectives and a batch CLI.
//!
//! Module map:
//!
//! * [`models`]: dynamics, integrators and the observation operator.
//! * [`ssm`]: state-space model, truth runs and the observation likelihood.
//! * [`filters`]: Kalman, steady-state, fixed-gain and ensemble filters.
//! * [`objective`]: offline, online and transport objectives.
//! * [`optimize`]: gradients, descent, online learning and grid sweeps.
//! * [`metrics`]: RMSE, KL-to-reference and out-of-sample evaluation.
//! * [`cli`]: experiment configuration and the subcommands behind the binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod filters;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod optimize;
pub mod rng;
pub mod ssm;

pub use error::{Error, Result};

/// Dense column vector used for states and observations.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for covariances, gains and ensembles.
pub type Matrix = nalgebra::DMatrix<f64>;
