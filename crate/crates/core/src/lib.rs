//! Simulation and analysis of an optically levitated microsphere whose
//! center-of-mass modes are cooled by velocity-proportional feedback.
//!
//! The crate covers the gas-damping model, the trap and thermal predictions,
//! a discrete feedback controller, Langevin integrators for free and
//! closed-loop motion, Welch spectra with line fits and calibration, and
//! sweep drivers used by the `coldtrap` command line tool.

pub mod config;
pub mod constants;
pub mod controller;
pub mod error;
pub mod gas;
pub mod langevin;
pub mod persist;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod sweep;
pub mod trajectory;
pub mod trap;

pub use error::{Error, Result};
