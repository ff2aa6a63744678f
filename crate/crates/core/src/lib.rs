//! Discrete-time survival models trained for calibration on many
//! subpopulations at once, with the estimators, losses and metrics around
//! them.

pub mod calibration;
pub mod commands;
pub mod data;
pub mod error;
pub mod estimators;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod subgroups;
pub mod trainer;

pub use error::{Result, SurvError};
