//! Simulation of risk scores that change the outcomes they predict.
//!
//! A score `rho` is fitted at the end of each epoch and deployed in the next;
//! interventions triggered by it shift actionable and latent covariates, so
//! the next score is fitted to data the previous one altered. The crate
//! provides the causal model ([`model`]), seeded sampling ([`sampling`]),
//! score estimators ([`estimators`]), the naive-updating map and its fixed
//! points ([`dynamics`]), successive adjuvancy ([`adjuvancy`]), the metric,
//! objective and cost with the counterexample reproductions ([`evaluation`]),
//! and the control-intervention strategy with a POMDP adapter ([`control`]).

pub mod adjuvancy;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod math;
pub mod model;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use rng::RngSeed;
