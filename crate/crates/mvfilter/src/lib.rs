//! Experiment runner for `mvfilter-core`: configuration files, the functional
//! battery, sweeps over discretization parameters, CSV/JSON artifacts and
//! markdown reports.

pub mod acceptance;
pub mod battery;
pub mod config;
pub mod experiment;
pub mod records;
pub mod report;

pub use config::{Cell, Diagnostic, ExperimentConfig, Sweep};
pub use experiment::run_experiment;
pub use records::ResultRecord;

/// `<crate version>+<git describe>` when built from a checkout.
pub const VERSION: &str = env!("MVFILTER_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid battery: {0}")]
    Battery(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("unknown preset or experiment {0:?}")]
    UnknownPreset(String),
    #[error("a cell needs {work:.3e} particle-steps, above the cap {cap:.3e}")]
    WorkCap { work: f64, cap: f64 },
    #[error(transparent)]
    Core(#[from] mvfilter_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
