//! Deterministic SEQIHR epidemic–economics toolkit.
//!
//! The crate covers the single-population SEQIHR model and its steady
//! states, the control reproduction number, least-squares calibration to
//! daily death series, an age-stratified extension with lockdown policies
//! and an employment-based output measure, and Pareto-frontier search over
//! uniform and age-targeted lockdowns.

pub mod calibration;
pub mod equilibria;
pub mod error;
pub mod integrator;
pub mod model;
pub mod multirisk;
pub mod optim;
pub mod policy;
pub mod reproduction;

pub use error::{Error, ErrorClass, Result};
