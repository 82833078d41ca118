//! Spatial Gaussian models whose covariance parameters depend on the local mean.
//!
//! The model couples a spatial regression mean with a covariance function whose
//! nugget, sill, and range vary over space through link functions of that mean.
//! The crate provides covariance construction, penalized likelihood evaluation,
//! three estimation procedures of increasing cost, a likelihood-ratio test for
//! mean-dependent covariance structure, plug-in kriging, and a simulation
//! harness for calibration experiments.

pub mod covariance;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod geometry;
pub mod likelihood;
pub mod nstest;
pub mod optimize;
pub mod prediction;
pub mod simulation;
pub mod special;

pub use error::{Error, Result};
