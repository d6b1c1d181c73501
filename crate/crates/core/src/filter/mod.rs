//! Particle filters, their self-consistency diagnostics, and the linear-Gaussian reference.

pub mod diagnostics;
pub mod kalman;
pub mod state;
pub mod uniqueness;
pub mod zakai;

pub use state::FilterState;
pub use zakai::{run_filter, run_filter_with, sensor_variant_step, zakai_step, FilterConfig, FilterRun, Resampling};
