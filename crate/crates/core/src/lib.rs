//! Generalized Bayesian inference for a Huber-loss random-intercept model,
//! with a sandwich calibration that turns Gibbs-posterior draws into
//! intervals with frequentist coverage.
//!
//! The pipeline is: whiten a grouped dataset ([`model`]), sample the
//! loss-based posterior by data augmentation ([`sampler`]), estimate the
//! sandwich target ([`estimator`], [`calibration`]) and map the draws
//! through Ω̂. [`experiment`] runs the coverage study end to end.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod calibration;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod model;
pub mod penalty;
pub mod sampler;

pub use error::{Error, Result};
