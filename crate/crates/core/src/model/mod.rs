//! Coefficients, measures, test functions and the generators built from them.

pub mod coefficients;
pub mod functional;
pub mod generator;
pub mod hypotheses;
pub mod measure;
pub mod testfn;
pub mod wasserstein;

pub use coefficients::{CoefficientSet, Dims, Evaluation, HypothesisConstants, NoiseMode};
pub use functional::{CylindricalStateFunctional, MeasureFunctional, Outer};
pub use measure::EmpiricalMeasure;
pub use testfn::{SharedTestFunction, TestFunction};
