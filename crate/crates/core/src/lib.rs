//! Coupled agent/density crowd flow simulation.

pub mod desired;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod interaction;
pub mod io;
pub mod cli;
pub mod convergence;
pub mod measures;
pub mod scenario;
pub mod stepper;
pub mod vec2;

pub use error::{Error, Result};
