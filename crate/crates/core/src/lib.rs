//! Fitted Q-iteration for batch and fed-batch reactor control, with the
//! reactor models, baseline optimizers and failure-scenario harness used to
//! evaluate it.

pub mod approximator;
pub mod baselines;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod fqi;
pub mod models;
pub mod output;
pub mod sampling;
pub mod scenario;

pub use error::{Error, Result};
