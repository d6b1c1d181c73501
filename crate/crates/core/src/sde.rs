//! Euler–Maruyama simulation of the signal-observation system.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::coefficients::{CoefficientSet, Dims, Evaluation, NoiseMode};
use crate::model::measure::EmpiricalMeasure;
use crate::par;
use crate::rng::{self, Domain, StreamRng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_law: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub scheme: Scheme,
    /// Each step's Brownian increment is the sum of this many sub-increments;
    /// see [`rng::brownian_step`].
    #[cfg_attr(feature = "serde", serde(default = "default_substeps"))]
    pub noise_substeps: u32,
    /// Any coordinate beyond this magnitude is reported as a blow-up.
    #[cfg_attr(feature = "serde", serde(default = "default_guard"))]
    pub overflow_guard: f64,
}

#[cfg(feature = "serde")]
fn default_substeps() -> u32 {
    1
}

#[cfg(feature = "serde")]
fn default_guard() -> f64 {
    1e12
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64, n_law: usize, seed: u64) -> Self {
        Self { t_end, dt, n_law, seed, scheme: Scheme::EulerMaruyama, noise_substeps: 1, overflow_guard: 1e12 }
    }

    pub fn with_substeps(mut self, substeps: u32) -> Self {
        self.noise_substeps = substeps;
        self
    }

    /// Number of steps, after checking that the configuration is usable.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::InvalidConfig("dt and T must be positive".into()));
        }
        let ratio = self.t_end / self.dt;
        let k = libm::round(ratio);
        if (ratio - k).abs() > 1e-9 {
            return Err(Error::InvalidConfig("T/dt must be an integer".into()));
        }
        if self.n_law < 2 {
            return Err(Error::InvalidConfig("the law ensemble needs at least two particles".into()));
        }
        if self.noise_substeps == 0 {
            return Err(Error::InvalidConfig("noise_substeps must be at least 1".into()));
        }
        Ok(k as usize)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Distribution of the initial signal value.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum InitialLaw {
    PointMass { at: Vec<f64> },
    /// Independent coordinates with the given means and standard deviations.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    /// Independent coordinates uniform on `[low_i, high_i]`.
    Uniform { low: Vec<f64>, high: Vec<f64> },
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            Self::PointMass { at } => at.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Uniform { low, .. } => low.len(),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng, out: &mut [f64]) {
        use rand::Rng;
        match self {
            Self::PointMass { at } => out.copy_from_slice(at),
            Self::Gaussian { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    *o = m + s * rng::standard_normal(rng);
                }
            }
            Self::Uniform { low, high } => {
                for ((o, a), b) in out.iter_mut().zip(low).zip(high) {
                    *o = a + (b - a) * rng.random::<f64>();
                }
            }
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let ok = match self {
            Self::PointMass { at } => at.len() == n,
            Self::Gaussian { mean, std } => mean.len() == n && std.len() == n && std.iter().all(|s| *s >= 0.0),
            Self::Uniform { low, high } => low.len() == n && high.len() == n && low.iter().zip(high).all(|(a, b)| a <= b),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("initial law does not match the signal dimension".into()))
        }
    }
}

/// Grid-indexed approximation of `t ↦ L(X_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LawFlow {
    dt: f64,
    measures: Vec<EmpiricalMeasure>,
}

impl LawFlow {
    pub fn new(dt: f64, measures: Vec<EmpiricalMeasure>) -> Self {
        Self { dt, measures }
    }

    /// The measure at grid index `k`; indices past the end return the last one.
    pub fn at(&self, k: usize) -> &EmpiricalMeasure {
        &self.measures[k.min(self.measures.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    /// `sup_k ∫|x|² dL(X_{t_k})`.
    pub fn second_moment_bound(&self) -> f64 {
        self.measures.iter().fold(0.0, |m, mu| m.max(mu.second_moment()))
    }
}

fn check_finite(step: usize, xs: &[f64], n: usize, guard: f64) -> Result<()> {
    match xs.iter().position(|x| !(x.abs() <= guard)) {
        Some(pos) => Err(Error::BlowUp { step, particle: pos / n }),
        None => Ok(()),
    }
}

/// Applies one Euler step of the signal equation in place.
fn signal_increment(e: &Evaluation, dims: Dims, dt: f64, dw: &[f64], dv: &[f64], x: &mut [f64]) {
    let Dims { d, m, .. } = dims;
    for (xi, bi) in x.iter_mut().zip(&e.b1) {
        *xi += bi * dt;
    }
    linalg::gemv_acc(x, &e.sigma0, d, dw, 1.0);
    linalg::gemv_acc(x, &e.sigma1, m, dv, 1.0);
}

/// Interacting-particle approximation of the signal law.
///
/// Particle `i` draws from stream `i` of the law-ensemble domain, and at every
/// step the coefficients see the ensemble's current empirical measure.
pub fn simulate_law_flow(c: &CoefficientSet, init: &InitialLaw, cfg: &SimConfig) -> Result<LawFlow> {
    let steps = cfg.steps()?;
    let dims = c.dims();
    init.validate(dims.n)?;
    let n = dims.n;
    let mut rngs: Vec<StreamRng> = (0..cfg.n_law).map(|i| rng::stream(cfg.seed, Domain::LawEnsemble, i as u64)).collect();
    let mut points = vec![0.0; cfg.n_law * n];
    for (rng, x) in rngs.iter_mut().zip(points.chunks_exact_mut(n)) {
        init.sample(rng, x);
    }
    let mut measures = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let mu = EmpiricalMeasure::uniform(n, points.clone())?;
        let t = cfg.time(k);
        par::zip_rows(&mut rngs, &mut points, n, |_, rng, x| {
            let mut e = Evaluation::new(dims);
            let (mut dw, mut dv) = (vec![0.0; dims.d], vec![0.0; dims.m]);
            evaluate_signal(c, t, x, &mu, &mut e);
            rng::brownian_step(rng, cfg.dt, cfg.noise_substeps, &mut dw, &mut dv);
            signal_increment(&e, dims, cfg.dt, &dw, &dv, x);
        });
        measures.push(mu);
        check_finite(k + 1, &points, n, cfg.overflow_guard)?;
    }
    measures.push(EmpiricalMeasure::uniform(n, points)?);
    Ok(LawFlow::new(cfg.dt, measures))
}

fn evaluate_signal(c: &CoefficientSet, t: f64, x: &[f64], mu: &EmpiricalMeasure, e: &mut Evaluation) {
    c.b1(t, x, mu, &mut e.b1);
    c.sigma0(t, x, mu, &mut e.sigma0);
    c.sigma1(t, x, mu, &mut e.sigma1);
}

/// The path of law-ensemble particle `index` simulated on its own, with the
/// given law flow substituted for the ensemble. For distribution-free
/// coefficients it coincides with that particle inside [`simulate_law_flow`].
pub fn signal_path(c: &CoefficientSet, init: &InitialLaw, cfg: &SimConfig, law: &LawFlow, index: usize) -> Result<Vec<f64>> {
    let steps = cfg.steps()?;
    let dims = c.dims();
    init.validate(dims.n)?;
    let mut rng = rng::stream(cfg.seed, Domain::LawEnsemble, index as u64);
    let mut x = vec![0.0; dims.n];
    init.sample(&mut rng, &mut x);
    let mut path = x.clone();
    let mut e = Evaluation::new(dims);
    let (mut dw, mut dv) = (vec![0.0; dims.d], vec![0.0; dims.m]);
    for k in 0..steps {
        evaluate_signal(c, cfg.time(k), &x, law.at(k), &mut e);
        rng::brownian_step(&mut rng, cfg.dt, cfg.noise_substeps, &mut dw, &mut dv);
        signal_increment(&e, dims, cfg.dt, &dw, &dv, &mut x);
        check_finite(k + 1, &x, dims.n, cfg.overflow_guard)?;
        path.extend_from_slice(&x);
    }
    Ok(path)
}

/// A simulated signal-observation path on the grid `t_k = k dt`.
///
/// `dvtilde` holds the increments of the reference-measure Brownian motion
/// `Ṽ = V + ∫h ds` (in sensor-correlated mode, of `Ũ = U + ∫b̌2 ds`), and
/// `log_gamma` the log-likelihood ratio `log Γ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthPath {
    pub dims: Dims,
    pub dt: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dw: Vec<f64>,
    pub dv: Vec<f64>,
    pub dvtilde: Vec<f64>,
    pub log_gamma: Vec<f64>,
}

impl TruthPath {
    pub fn steps(&self) -> usize {
        self.log_gamma.len() - 1
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.dims.n..(k + 1) * self.dims.n]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.dims.m..(k + 1) * self.dims.m]
    }

    pub fn dvtilde_at(&self, k: usize) -> &[f64] {
        &self.dvtilde[k * self.dims.m..(k + 1) * self.dims.m]
    }

    /// `Ṽ_{t_k}` with `Ṽ_0 = 0`.
    pub fn vtilde_at(&self, k: usize) -> Vec<f64> {
        let m = self.dims.m;
        let mut v = vec![0.0; m];
        for j in 0..k {
            v.iter_mut().zip(&self.dvtilde[j * m..(j + 1) * m]).for_each(|(a, b)| *a += b);
        }
        v
    }

    pub fn gamma(&self, k: usize) -> f64 {
        libm::exp(self.log_gamma[k])
    }

    pub fn gamma_inv(&self, k: usize) -> f64 {
        libm::exp(-self.log_gamma[k])
    }
}

/// Simulates the true signal and its observation with noise independent of
/// the law ensemble. `Y_0 = 0`.
pub fn simulate_truth(c: &CoefficientSet, law: &LawFlow, init: &InitialLaw, cfg: &SimConfig) -> Result<TruthPath> {
    simulate_truth_labelled(c, law, init, cfg, 0)
}

/// As [`simulate_truth`], drawing from truth stream `label` so that independent
/// truths can be produced under one seed.
pub fn simulate_truth_labelled(
    c: &CoefficientSet,
    law: &LawFlow,
    init: &InitialLaw,
    cfg: &SimConfig,
    label: u64,
) -> Result<TruthPath> {
    let steps = cfg.steps()?;
    let dims = c.dims();
    init.validate(dims.n)?;
    if law.len() < steps + 1 {
        return Err(Error::InvalidConfig("law flow does not cover the simulation grid".into()));
    }
    let Dims { n, d, m } = dims;
    let mut rng = rng::stream(cfg.seed, Domain::Truth, label);
    let mut x = vec![0.0; n];
    init.sample(&mut rng, &mut x);
    let mut y = vec![0.0; m];
    let mut path = TruthPath {
        dims,
        dt: cfg.dt,
        x: x.clone(),
        y: y.clone(),
        dw: Vec::with_capacity(steps * d),
        dv: Vec::with_capacity(steps * m),
        dvtilde: Vec::with_capacity(steps * m),
        log_gamma: vec![0.0],
    };
    let mut e = Evaluation::new(dims);
    let (mut dw, mut dv) = (vec![0.0; d], vec![0.0; m]);
    let mut log_gamma = 0.0;
    for k in 0..steps {
        let t = cfg.time(k);
        let inv = c.sigma2_inverse(t)?;
        c.evaluate(t, &x, law.at(k), &inv, &mut e);
        rng::brownian_step(&mut rng, cfg.dt, cfg.noise_substeps, &mut dw, &mut dv);
        // Observation noise increment and the innovation-side quantities.
        let mut noise = vec![0.0; m];
        let h = match c.mode() {
            NoiseMode::SignalCorrelated => {
                linalg::gemv_acc(&mut noise, &c.sigma2(t), m, &dv, 1.0);
                e.h.clone()
            }
            NoiseMode::SensorCorrelated { sigma2, sigma3 } => {
                linalg::gemv_acc(&mut noise, sigma2, m, &dv, 1.0);
                linalg::gemv_acc(&mut noise, sigma3, d, &dw, 1.0);
                e.b2.clone()
            }
        };
        let driving: Vec<f64> = match c.mode() {
            NoiseMode::SignalCorrelated => dv.clone(),
            NoiseMode::SensorCorrelated { .. } => noise.clone(),
        };
        let mut hv = 0.0;
        let mut hh = 0.0;
        for j in 0..m {
            let inc = driving[j] + h[j] * cfg.dt;
            path.dvtilde.push(inc);
            hv += h[j] * inc;
            hh += h[j] * h[j];
            y[j] += e.b2[j] * cfg.dt + noise[j];
        }
        log_gamma += hv - 0.5 * hh * cfg.dt;
        match c.mode() {
            NoiseMode::SignalCorrelated => signal_increment(&e, dims, cfg.dt, &dw, &dv, &mut x),
            NoiseMode::SensorCorrelated { .. } => {
                for (xi, bi) in x.iter_mut().zip(&e.b1) {
                    *xi += bi * cfg.dt;
                }
                linalg::gemv_acc(&mut x, &e.sigma1, m, &dv, 1.0);
            }
        }
        check_finite(k + 1, &x, n, cfg.overflow_guard)?;
        path.x.extend_from_slice(&x);
        path.y.extend_from_slice(&y);
        path.dw.extend_from_slice(&dw);
        path.dv.extend_from_slice(&dv);
        path.log_gamma.push(log_gamma);
    }
    Ok(path)
}

/// `ΔṼ_k = σ2(t_k)⁻¹ ΔY_k` for an observation path sampled on the grid.
pub fn innovation_from_observation(c: &CoefficientSet, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = c.dims().m;
    if y.len() % m != 0 || y.len() < m {
        return Err(Error::DimensionMismatch { expected: m, found: y.len() % m });
    }
    let steps = y.len() / m - 1;
    let sigma_form = c.filter_form()?;
    let mut out = Vec::with_capacity(steps * m);
    for k in 0..steps {
        let inv = sigma_form.sigma2_inverse(k as f64 * dt)?;
        let dy: Vec<f64> = (0..m).map(|j| y[(k + 1) * m + j] - y[k * m + j]).collect();
        let mut inc = vec![0.0; m];
        linalg::gemv_acc(&mut inc, &inv, m, &dy, 1.0);
        out.extend_from_slice(&inc);
    }
    Ok(out)
}

/// Standard Brownian increments for the observation noise under the reference
/// measure, where `Ṽ` is itself a Brownian motion independent of the signal.
pub fn reference_innovation(m: usize, steps: usize, dt: f64, substeps: u32, seed: u64, label: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Domain::Reference, label);
    let mut out = vec![0.0; steps * m];
    for row in out.chunks_exact_mut(m) {
        rng::brownian_step(&mut rng, dt, substeps, &mut [], row);
    }
    out
}
