use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("measure has zero mass and cannot be viewed as a probability")]
    ZeroMass,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("observation diffusion is singular at t = {t}")]
    SingularMatrix { t: f64 },
    #[error("observation diffusion is ill-conditioned at t = {t} (condition number {cond:.3e})")]
    IllConditioned { t: f64, cond: f64 },
    #[error("sensor noise loadings violate the unit-covariance condition (max deviation {deviation:.3e})")]
    UnitCovariance { deviation: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid weight at atom {index}: weights must be finite and non-negative")]
    InvalidWeight { index: usize },
    #[error("numerical blow-up at step {step} (particle {particle})")]
    BlowUp { step: usize, particle: usize },
    #[error("filter mass underflow at step {step}; enable resampling or increase the particle count")]
    MassUnderflow { step: usize },
    #[error("Kalman-Bucy covariance is not positive semi-definite at step {step} (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemiDefinite { step: usize, min_eigenvalue: f64 },
    #[error("measure support at {position} escapes the mollifier grid (usable half-width {limit})")]
    GridCoverage { position: f64, limit: f64 },
    #[error("noise records do not match: {0}")]
    NoiseMismatch(String),
    #[error("run was resampled; weak-form diagnostics need untouched weights")]
    Resampled,
    #[error("ensemble too small: need at least {required} runs, found {found}")]
    EnsembleTooSmall { required: usize, found: usize },
    #[error("integrability functional {value:.3e} exceeds the cap {cap:.3e}")]
    IntegrabilityCap { value: f64, cap: f64 },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
