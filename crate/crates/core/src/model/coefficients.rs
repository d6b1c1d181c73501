//! Coefficient sets of the signal-observation system
//!
//! ```text
//! dX = b1(t,X,L_X) dt + σ0(t,X,L_X) dW + σ1(t,X,L_X) dV
//! dY = b2(t,X,L_X) dt + σ2(t) dV
//! ```
//!
//! and of the sensor-correlated variant, where the signal is driven by `V`
//! alone and the observation noise is `σ̌2 V + σ̌3 W`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::linalg;

/// `(t, x, μ, out)`: a state- and law-dependent coefficient written into `out`.
pub type StateCoefficient = dyn Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync;
/// `(t, out)`: a time-dependent matrix coefficient.
pub type TimeCoefficient = dyn Fn(f64, &mut [f64]) + Send + Sync;

/// Signal dimension `n`, signal-noise dimension `d`, observation dimension `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub n: usize,
    pub d: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseMode {
    /// Signal noise `σ0 dW + σ1 dV` shares `V` with the observation.
    SignalCorrelated,
    /// Observation noise `σ̌2 dV + σ̌3 dW` with `σ̌2: m×m`, `σ̌3: m×d` (row-major).
    SensorCorrelated { sigma2: Vec<f64>, sigma3: Vec<f64> },
}

/// Constants the user declares for the hypothesis families; `None` means
/// the family is not claimed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HypothesisConstants {
    /// Joint Lipschitz constant of `b1, σ0, σ1` in `(x, μ)` against `|x-y| + W2`.
    pub lipschitz: Option<f64>,
    /// `|b1|² + ‖σ0‖² + ‖σ1‖² ≤ K (1 + |x| + ‖μ‖₂)²`.
    pub growth: Option<f64>,
    /// `|b1| + ‖σ0‖ + ‖σ1‖ ≤ K`.
    pub bound: Option<f64>,
    /// `|b2| ∨ ‖σ2‖ ∨ ‖σ2⁻¹‖ ≤ K2`.
    pub observation_bound: Option<f64>,
    /// Lipschitz constant of `b2` in `(x, μ)`.
    pub observation_lipschitz: Option<f64>,
}

/// Default cap on the condition number of `σ2(t)`.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    dims: Dims,
    b1: Arc<StateCoefficient>,
    sigma0: Arc<StateCoefficient>,
    sigma1: Arc<StateCoefficient>,
    b2: Arc<StateCoefficient>,
    sigma2: Arc<TimeCoefficient>,
    mode: NoiseMode,
    constants: HypothesisConstants,
    condition_cap: f64,
}

impl core::fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("mode", &self.mode)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

fn zero_state() -> Arc<StateCoefficient> {
    Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0))
}

pub struct CoefficientSetBuilder {
    set: CoefficientSet,
    horizon: f64,
}

impl CoefficientSetBuilder {
    pub fn drift(mut self, f: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.set.b1 = Arc::new(f);
        self
    }

    /// `σ0`, an `n × d` matrix written row-major.
    pub fn signal_diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.set.sigma0 = Arc::new(f);
        self
    }

    /// `σ1`, an `n × m` matrix written row-major. In sensor-correlated mode this is `σ̌1`.
    pub fn correlated_diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.set.sigma1 = Arc::new(f);
        self
    }

    pub fn observation_drift(
        mut self,
        f: impl Fn(f64, &[f64], &EmpiricalMeasure, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.set.b2 = Arc::new(f);
        self
    }

    /// `σ2(t)`, an invertible `m × m` matrix written row-major. Defaults to the identity.
    pub fn observation_diffusion(mut self, f: impl Fn(f64, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.set.sigma2 = Arc::new(f);
        self
    }

    pub fn constants(mut self, constants: HypothesisConstants) -> Self {
        self.set.constants = constants;
        self
    }

    pub fn condition_cap(mut self, cap: f64) -> Self {
        self.set.condition_cap = cap;
        self
    }

    /// Horizon over which `σ2` invertibility is checked at build time.
    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn build(self) -> Result<CoefficientSet> {
        let set = self.set;
        let Dims { n, d, m } = set.dims;
        if n == 0 || m == 0 {
            return Err(Error::InvalidConfig("signal and observation dimensions must be positive".into()));
        }
        if !(self.horizon > 0.0) || !(set.condition_cap > 1.0) {
            return Err(Error::InvalidConfig("horizon must be positive and the condition cap above 1".into()));
        }
        if let NoiseMode::SensorCorrelated { sigma2, sigma3 } = &set.mode {
            if sigma2.len() != m * m || sigma3.len() != m * d {
                return Err(Error::DimensionMismatch { expected: m * m + m * d, found: sigma2.len() + sigma3.len() });
            }
            let total = linalg::matmul_bt(sigma2, sigma2, m, m, m)
                .iter()
                .zip(linalg::matmul_bt(sigma3, sigma3, m, d, m))
                .map(|(a, b)| a + b)
                .collect::<Vec<_>>();
            let deviation = total
                .iter()
                .zip(linalg::identity(m))
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            if deviation > 1e-12 {
                return Err(Error::UnitCovariance { deviation });
            }
        }
        for k in 0..=64 {
            set.sigma2_inverse(self.horizon * f64::from(k) / 64.0)?;
        }
        Ok(set)
    }
}

impl CoefficientSet {
    /// Starts a signal-correlated coefficient set with all coefficients zero and `σ2 = I`.
    pub fn builder(name: impl Into<String>, dims: Dims) -> CoefficientSetBuilder {
        Self::builder_with_mode(name, dims, NoiseMode::SignalCorrelated)
    }

    /// Starts a sensor-correlated coefficient set. `σ̌2` is `m × m`, `σ̌3` is `m × d`.
    /// Only `drift`, `correlated_diffusion` (as `σ̌1`) and `observation_drift`
    /// (as `b̌2`) are meaningful on the returned builder.
    pub fn sensor_builder(name: impl Into<String>, dims: Dims, sigma2: Vec<f64>, sigma3: Vec<f64>) -> CoefficientSetBuilder {
        Self::builder_with_mode(name, dims, NoiseMode::SensorCorrelated { sigma2, sigma3 })
    }

    fn builder_with_mode(name: impl Into<String>, dims: Dims, mode: NoiseMode) -> CoefficientSetBuilder {
        let m = dims.m;
        CoefficientSetBuilder {
            set: CoefficientSet {
                name: name.into(),
                dims,
                b1: zero_state(),
                sigma0: zero_state(),
                sigma1: zero_state(),
                b2: zero_state(),
                sigma2: Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&linalg::identity(m))),
                mode,
                constants: HypothesisConstants::default(),
                condition_cap: DEFAULT_CONDITION_CAP,
            },
            horizon: 1.0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn mode(&self) -> &NoiseMode {
        &self.mode
    }

    pub fn constants(&self) -> &HypothesisConstants {
        &self.constants
    }

    pub fn b1(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.b1)(t, x, mu, out)
    }

    pub fn sigma0(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.sigma0)(t, x, mu, out)
    }

    pub fn sigma1(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.sigma1)(t, x, mu, out)
    }

    pub fn b2(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, out: &mut [f64]) {
        (self.b2)(t, x, mu, out)
    }

    pub fn sigma2(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.m * self.dims.m];
        (self.sigma2)(t, &mut out);
        out
    }

    /// `σ2(t)⁻¹`, rejecting singular or ill-conditioned matrices.
    pub fn sigma2_inverse(&self, t: f64) -> Result<Vec<f64>> {
        let m = self.dims.m;
        let s = self.sigma2(t);
        let (inv, cond) = linalg::inverse_with_condition(&s, m).ok_or(Error::SingularMatrix { t })?;
        if !(cond <= self.condition_cap) {
            return Err(Error::IllConditioned { t, cond });
        }
        Ok(inv)
    }

    /// Evaluates every coefficient and `h = σ2⁻¹ b2` at `(t, x, μ)`.
    pub fn evaluate(&self, t: f64, x: &[f64], mu: &EmpiricalMeasure, sigma2_inv: &[f64], out: &mut Evaluation) {
        (self.b1)(t, x, mu, &mut out.b1);
        (self.sigma0)(t, x, mu, &mut out.sigma0);
        (self.sigma1)(t, x, mu, &mut out.sigma1);
        (self.b2)(t, x, mu, &mut out.b2);
        out.h.fill(0.0);
        linalg::gemv_acc(&mut out.h, sigma2_inv, self.dims.m, &out.b2, 1.0);
    }

    /// The equivalent signal-correlated coefficients seen by the filter.
    ///
    /// In sensor-correlated mode the observation noise `U = σ̌2 V + σ̌3 W` is a
    /// standard Brownian motion and the signal noise splits into a part
    /// correlated with `U` (loading `σ̌1 σ̌2ᵀ`) and an independent remainder with
    /// loading `σ̌1 (I - σ̌2ᵀσ̌2)^{1/2}`. With `σ2 = I` the filter then runs the
    /// ordinary correlated-noise scheme driven by `dU = dY - b̌2 dt`.
    pub fn filter_form(&self) -> Result<CoefficientSet> {
        let NoiseMode::SensorCorrelated { sigma2, .. } = &self.mode else {
            return Ok(self.clone());
        };
        let Dims { n, m, .. } = self.dims;
        let complement: Vec<f64> = linalg::identity(m)
            .iter()
            .zip(linalg::matmul(&linalg::transpose(sigma2, m, m), sigma2, m, m, m))
            .map(|(a, b)| a - b)
            .collect();
        let root = linalg::psd_sqrt(&complement, m, 1e-10).ok_or(Error::UnitCovariance { deviation: f64::NAN })?;
        let s2 = sigma2.clone();
        let check1 = self.sigma1.clone();
        let check1b = self.sigma1.clone();
        let sigma0: Arc<StateCoefficient> = Arc::new(move |t, x, mu, out: &mut [f64]| {
            let mut s1 = vec![0.0; n * m];
            check1(t, x, mu, &mut s1);
            out.copy_from_slice(&linalg::matmul(&s1, &root, n, m, m));
        });
        let sigma1: Arc<StateCoefficient> = Arc::new(move |t, x, mu, out: &mut [f64]| {
            let mut s1 = vec![0.0; n * m];
            check1b(t, x, mu, &mut s1);
            out.copy_from_slice(&linalg::matmul_bt(&s1, &s2, n, m, m));
        });
        Ok(CoefficientSet {
            name: self.name.clone(),
            dims: Dims { n, d: m, m },
            b1: self.b1.clone(),
            sigma0,
            sigma1,
            b2: self.b2.clone(),
            sigma2: Arc::new(move |_, out: &mut [f64]| out.copy_from_slice(&linalg::identity(m))),
            mode: NoiseMode::SignalCorrelated,
            constants: self.constants,
            condition_cap: self.condition_cap,
        })
    }
}

/// Scratch buffers holding all coefficient values at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub b1: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub b2: Vec<f64>,
    pub h: Vec<f64>,
}

impl Evaluation {
    pub fn new(dims: Dims) -> Self {
        let Dims { n, d, m } = dims;
        Self { b1: vec![0.0; n], sigma0: vec![0.0; n * d], sigma1: vec![0.0; n * m], b2: vec![0.0; m], h: vec![0.0; m] }
    }
}

/// `h(t, x, μ) = σ2(t)⁻¹ b2(t, x, μ)`.
pub fn eval_h(c: &CoefficientSet, t: f64, x: &[f64], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    if x.len() != c.dims.n {
        return Err(Error::DimensionMismatch { expected: c.dims.n, found: x.len() });
    }
    let inv = c.sigma2_inverse(t)?;
    let m = c.dims.m;
    let mut b2 = vec![0.0; m];
    c.b2(t, x, mu, &mut b2);
    let mut h = vec![0.0; m];
    linalg::gemv_acc(&mut h, &inv, m, &b2, 1.0);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(n: usize, d: usize, m: usize) -> Dims {
        Dims { n, d, m }
    }

    #[test]
    fn h_with_identity_and_zero_drift() {
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let c = CoefficientSet::builder("tanh", dims(1, 1, 1))
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap();
        assert_eq!(eval_h(&c, 0.0, &[0.7], &mu).unwrap(), vec![libm::tanh(0.7)]);
        let z = CoefficientSet::builder("zero", dims(1, 1, 1)).build().unwrap();
        assert_eq!(eval_h(&z, 0.3, &[2.0], &mu).unwrap(), vec![0.0]);
    }

    #[test]
    fn h_solves_the_linear_system() {
        let s2 = [2.0, 0.3, -0.4, 1.5];
        let c = CoefficientSet::builder("solve", dims(2, 1, 2))
            .observation_drift(|_, x, _, out| {
                out[0] = libm::sin(x[0]);
                out[1] = libm::cos(x[1]);
            })
            .observation_diffusion(move |_, out| out.copy_from_slice(&s2))
            .build()
            .unwrap();
        let x = [0.4, -1.1];
        let h = eval_h(&c, 0.0, &x, &EmpiricalMeasure::dirac(&x)).unwrap();
        // Oracle: Cramer's rule for σ2 h = b2.
        let b = [libm::sin(0.4), libm::cos(-1.1)];
        let det = s2[0] * s2[3] - s2[1] * s2[2];
        let h0 = (b[0] * s2[3] - s2[1] * b[1]) / det;
        let h1 = (s2[0] * b[1] - b[0] * s2[2]) / det;
        assert!((h[0] - h0).abs() < 1e-14 && (h[1] - h1).abs() < 1e-14);
    }

    #[test]
    fn singular_observation_diffusion_is_rejected() {
        let err = CoefficientSet::builder("sing", dims(1, 1, 2))
            .observation_diffusion(|_, out| out.copy_from_slice(&[1.0, 2.0, 2.0, 4.0]))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::SingularMatrix { .. }));
        let err = CoefficientSet::builder("cond", dims(1, 1, 2))
            .observation_diffusion(|_, out| out.copy_from_slice(&[1.0, 0.0, 0.0, 1e-10]))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }));
    }

    #[test]
    fn sensor_mode_checks_unit_covariance() {
        let ok = CoefficientSet::sensor_builder("s", dims(1, 1, 1), vec![0.6], vec![0.8]).build();
        assert!(ok.is_ok());
        let bad = CoefficientSet::sensor_builder("s", dims(1, 1, 1), vec![0.6], vec![0.7]).build();
        assert!(matches!(bad, Err(Error::UnitCovariance { .. })));
    }

    #[test]
    fn filter_form_preserves_total_signal_covariance() {
        let c = CoefficientSet::sensor_builder("s", dims(1, 1, 1), vec![0.6], vec![0.8])
            .correlated_diffusion(|_, _, _, out| out[0] = 1.5)
            .build()
            .unwrap();
        let f = c.filter_form().unwrap();
        assert_eq!(f.dims(), dims(1, 1, 1));
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let mut e = Evaluation::new(f.dims());
        f.evaluate(0.0, &[0.0], &mu, &[1.0], &mut e);
        assert!((e.sigma1[0] - 0.9).abs() < 1e-15);
        assert!((e.sigma0[0] * e.sigma0[0] + e.sigma1[0] * e.sigma1[0] - 2.25).abs() < 1e-12);
    }
}
