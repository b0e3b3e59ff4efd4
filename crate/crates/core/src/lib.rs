//! Causal conditional directed information between discrete time series:
//! plug-in estimation, likelihood-ratio tests with χ² calibration, finite
//! Markov simulation and a spike-train pair scan.

pub mod blocks;
pub mod causality;
pub mod cli;
pub mod distfns;
pub mod error;
pub mod experiments;
pub mod info;
pub mod markov;
pub mod report;
pub mod seeding;
pub mod series_io;
pub mod spike;

pub use error::{Error, Result};
