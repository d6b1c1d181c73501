//! The weighted particle scheme for the unnormalized conditional law.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::state::FilterState;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::coefficients::{CoefficientSet, Dims, Evaluation, NoiseMode};
use crate::model::measure::EmpiricalMeasure;
use crate::model::testfn::TestFunction;
use crate::par;
use crate::rng::{self, Domain, StreamRng};
use crate::sde::{LawFlow, SimConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Resampling {
    #[default]
    Never,
    /// Systematic resampling whenever the effective sample size drops below
    /// `ess_threshold · N`. Resampled runs are excluded from law-level diagnostics.
    Systematic { ess_threshold: f64 },
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FilterConfig {
    pub n_filt: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub resampling: Resampling,
    #[cfg_attr(feature = "serde", serde(default))]
    pub seed: u64,
}

impl FilterConfig {
    pub fn new(n_filt: usize, seed: u64) -> Self {
        Self { n_filt, resampling: Resampling::Never, seed }
    }
}

/// One step of the particle scheme under the reference measure:
///
/// `X' = X + (b1 - σ1 h) dt + σ0 ΔW + σ1 ΔṼ`, `lw' = lw + h·ΔṼ - ½|h|² dt`,
///
/// with all coefficients evaluated at `(t, X, law)`. `dw` holds the `N × d`
/// particle increments. `c` must be in signal-correlated form.
pub fn zakai_step(
    c: &CoefficientSet,
    law: &EmpiricalMeasure,
    state: &FilterState,
    dvtilde: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<FilterState> {
    let dims = c.dims();
    let Dims { n, d, m } = dims;
    if !matches!(c.mode(), NoiseMode::SignalCorrelated) {
        return Err(Error::InvalidConfig("the particle step needs signal-correlated coefficients".into()));
    }
    if state.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: state.dim() });
    }
    if dvtilde.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: dvtilde.len() });
    }
    if dw.len() != state.len() * d {
        return Err(Error::DimensionMismatch { expected: state.len() * d, found: dw.len() });
    }
    let t = state.time;
    let inv = c.sigma2_inverse(t)?;
    let mut next = state.clone();
    next.time = t + dt;
    par::map_rows(
        &mut next.particles,
        n,
        &mut next.log_weights,
        || Evaluation::new(dims),
        |e, i, x, lw| {
            c.evaluate(t, x, law, &inv, e);
            let mut hv = 0.0;
            let mut hh = 0.0;
            for l in 0..m {
                hv += e.h[l] * dvtilde[l];
                hh += e.h[l] * e.h[l];
            }
            let mut drift = e.b1.clone();
            linalg::gemv_acc(&mut drift, &e.sigma1, m, &e.h, -1.0);
            for (xi, b) in x.iter_mut().zip(&drift) {
                *xi += b * dt;
            }
            linalg::gemv_acc(x, &e.sigma0, d, &dw[i * d..(i + 1) * d], 1.0);
            linalg::gemv_acc(x, &e.sigma1, m, dvtilde, 1.0);
            *lw += hv - 0.5 * hh * dt;
        },
    );
    Ok(next)
}

/// The particle step for sensor-correlated coefficients, driven by the
/// observation increment `ΔY` (which plays the part of `ΔṼ` since the
/// observation noise has unit covariance).
pub fn sensor_variant_step(
    c: &CoefficientSet,
    law: &EmpiricalMeasure,
    state: &FilterState,
    dy: &[f64],
    dt: f64,
    dw: &[f64],
) -> Result<FilterState> {
    if !matches!(c.mode(), NoiseMode::SensorCorrelated { .. }) {
        return Err(Error::InvalidConfig("expected sensor-correlated coefficients".into()));
    }
    zakai_step(&c.filter_form()?, law, state, dy, dt, dw)
}

/// Everything a filter run produced: one state per grid time and the
/// innovations that drove it.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterRun {
    pub dt: f64,
    pub states: Vec<FilterState>,
    pub dvtilde: Vec<f64>,
    pub resampled: bool,
}

impl FilterRun {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn last(&self) -> &FilterState {
        &self.states[self.states.len() - 1]
    }

    /// `⟨μ̂_{t_k}, φ⟩` for every `k`.
    pub fn track(&self, phi: &dyn TestFunction) -> Vec<f64> {
        self.states.iter().map(|s| s.integrate(phi)).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.states.iter().map(FilterState::mass).collect()
    }
}

/// Runs the particle filter and hands every state to `observe` as it is produced.
///
/// `c` may be in either noise mode; sensor-correlated coefficients are
/// converted with [`CoefficientSet::filter_form`]. Particle increments come from
/// stream `label_i` of the particle domain, with the substep layout of `sim`.
/// Returns whether resampling ever happened.
pub fn run_filter_with<F>(
    c: &CoefficientSet,
    law: &LawFlow,
    initial: FilterState,
    dvtilde: &[f64],
    sim: &SimConfig,
    cfg: &FilterConfig,
    mut observe: F,
) -> Result<bool>
where
    F: FnMut(usize, &FilterState) -> Result<()>,
{
    let c = c.filter_form()?;
    let Dims { n, d, m } = c.dims();
    let steps = dvtilde.len() / m.max(1);
    if dvtilde.len() != steps * m {
        return Err(Error::DimensionMismatch { expected: steps * m, found: dvtilde.len() });
    }
    if law.len() < steps + 1 {
        return Err(Error::InvalidConfig("law flow does not cover the innovation record".into()));
    }
    if initial.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: initial.dim() });
    }
    let mut rngs: Vec<StreamRng> =
        initial.labels.iter().map(|&l| rng::stream(cfg.seed, Domain::FilterParticles, l)).collect();
    let mut dw = vec![0.0; initial.len() * d];
    let mut state = initial;
    let mut resampled = false;
    observe(0, &state)?;
    for k in 0..steps {
        par::zip_rows(&mut rngs, &mut dw, d, |_, rng, row| {
            rng::brownian_step(rng, sim.dt, sim.noise_substeps, row, &mut []);
        });
        state = zakai_step(&c, law.at(k), &state, &dvtilde[k * m..(k + 1) * m], sim.dt, &dw)?;
        state.time = sim.time(k + 1);
        if let Some(pos) = state.particles.iter().position(|x| !(x.abs() <= sim.overflow_guard)) {
            return Err(Error::BlowUp { step: k + 1, particle: pos / n });
        }
        if !(state.mass() > 0.0) {
            return Err(Error::MassUnderflow { step: k + 1 });
        }
        if let Resampling::Systematic { ess_threshold } = cfg.resampling {
            if state.effective_sample_size() < ess_threshold * state.len() as f64 {
                let mut rng = rng::stream(cfg.seed, Domain::Resampling, k as u64);
                state = systematic_resample(&state, rng.random::<f64>())?;
                resampled = true;
            }
        }
        observe(k + 1, &state)?;
    }
    Ok(resampled)
}

/// As [`run_filter_with`], keeping every state.
pub fn run_filter(
    c: &CoefficientSet,
    law: &LawFlow,
    initial: FilterState,
    dvtilde: &[f64],
    sim: &SimConfig,
    cfg: &FilterConfig,
) -> Result<FilterRun> {
    let mut states = Vec::with_capacity(dvtilde.len() / c.dims().m.max(1) + 1);
    let resampled = run_filter_with(c, law, initial, dvtilde, sim, cfg, |_, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(FilterRun { dt: sim.dt, states, dvtilde: dvtilde.to_vec(), resampled })
}

/// Systematic resampling with offset `u ∈ [0, 1)`. The total mass is kept and
/// spread evenly; slot `i` of the result is labelled `i`.
pub fn systematic_resample(state: &FilterState, u: f64) -> Result<FilterState> {
    let w = state.normalized_weights()?;
    let n = state.len();
    let log_mass = libm::log(state.mass());
    let mut particles = Vec::with_capacity(state.particles.len());
    let mut cumulative = w[0];
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64;
        while cumulative < target && j + 1 < n {
            j += 1;
            cumulative += w[j];
        }
        particles.extend_from_slice(state.particle(j));
    }
    FilterState::new(state.dim(), particles, vec![log_mass; n], (0..n as u64).collect(), state.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testfn::Polynomial;
    use crate::sde::{simulate_law_flow, simulate_truth, InitialLaw};

    fn scalar() -> Dims {
        Dims { n: 1, d: 1, m: 1 }
    }

    fn model(h_gain: f64) -> CoefficientSet {
        CoefficientSet::builder("tanh", scalar())
            .drift(|_, x, mu, out| out[0] = -libm::tanh(x[0]) + 0.3 * mu.mean()[0])
            .signal_diffusion(|_, _, _, out| out[0] = 0.8)
            .correlated_diffusion(|_, _, _, out| out[0] = 0.4)
            .observation_drift(move |_, x, _, out| out[0] = h_gain * libm::tanh(x[0]))
            .build()
            .unwrap()
    }

    #[test]
    fn step_matches_hand_computation() {
        let c = model(2.0);
        let law = EmpiricalMeasure::uniform(1, vec![0.5, 1.5]).unwrap();
        let s = FilterState::new(1, vec![0.2, -1.0], vec![0.0, 0.1], vec![0, 1], 0.0).unwrap();
        let (dv, dt, dw) = (0.05, 0.01, [0.1, -0.2]);
        let next = zakai_step(&c, &law, &s, &[dv], dt, &dw).unwrap();
        for i in 0..2 {
            let x = s.particles[i];
            let h = 2.0 * libm::tanh(x);
            let b1 = -libm::tanh(x) + 0.3 * 1.0;
            let xn = x + (b1 - 0.4 * h) * dt + 0.8 * dw[i] + 0.4 * dv;
            assert!((next.particles[i] - xn).abs() < 1e-15);
            let lw = s.log_weights[i] + h * dv - 0.5 * h * h * dt;
            assert!((next.log_weights[i] - lw).abs() < 1e-15);
        }
        assert_eq!(next.time, dt);
    }

    #[test]
    fn zero_observation_keeps_unit_mass() {
        let c = model(0.0);
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let sim = SimConfig::new(0.5, 0.01, 50, 1);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        let run = run_filter(&c, &law, FilterState::sample(&init, 64, 2).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(64, 2))
            .unwrap();
        assert!(run.masses().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn runs_are_reproducible_and_permutation_equivariant() {
        let c = model(1.5);
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let sim = SimConfig::new(0.3, 0.01, 50, 1);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        let cfg = FilterConfig::new(16, 5);
        let s0 = FilterState::sample(&init, 16, 5).unwrap();
        let a = run_filter(&c, &law, s0.clone(), &truth.dvtilde, &sim, &cfg).unwrap();
        let b = run_filter(&c, &law, s0.clone(), &truth.dvtilde, &sim, &cfg).unwrap();
        assert_eq!(a, b);
        let perm: Vec<usize> = (0..16).rev().collect();
        let p = run_filter(&c, &law, s0.permuted(&perm), &truth.dvtilde, &sim, &cfg).unwrap();
        assert_eq!(p.last().permuted(&perm), *a.last());
    }

    #[test]
    fn refinement_shares_particle_noise() {
        // Constant coefficients make the particle positions a pure function of
        // the accumulated noise, so coarse and fine runs must agree.
        let c = CoefficientSet::builder("bm", scalar()).signal_diffusion(|_, _, _, out| out[0] = 1.0).build().unwrap();
        let init = InitialLaw::PointMass { at: vec![0.0] };
        let coarse = SimConfig::new(0.2, 0.02, 2, 0).with_substeps(2);
        let fine = SimConfig::new(0.2, 0.01, 2, 0);
        let law_c = simulate_law_flow(&c, &init, &coarse).unwrap();
        let law_f = simulate_law_flow(&c, &init, &fine).unwrap();
        let cfg = FilterConfig::new(4, 8);
        let s0 = FilterState::sample(&init, 4, 8).unwrap();
        let a = run_filter(&c, &law_c, s0.clone(), &[0.0; 10], &coarse, &cfg).unwrap();
        let b = run_filter(&c, &law_f, s0, &[0.0; 20], &fine, &cfg).unwrap();
        for (x, y) in a.last().particles.iter().zip(&b.last().particles) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn systematic_resampling_keeps_mass_and_follows_weights() {
        let s = FilterState::new(1, vec![0.0, 1.0, 2.0, 3.0], vec![0.0, f64::NEG_INFINITY, libm::log(3.0), 0.0], vec![0, 1, 2, 3], 0.0)
            .unwrap();
        let r = systematic_resample(&s, 0.5).unwrap();
        assert!((r.mass() - s.mass()).abs() < 1e-14);
        let count = |v: f64| r.particles.iter().filter(|&&x| x == v).count();
        assert_eq!(count(1.0), 0);
        assert_eq!(count(2.0), 2);
        assert_eq!(r.labels, vec![0, 1, 2, 3]);
        let x = Polynomial::affine(0.0, &[1.0]);
        assert!((r.normalize(&x).unwrap() - s.normalize(&x).unwrap()).abs() < 0.5);
    }

    #[test]
    fn sensor_step_reduces_to_plain_step() {
        let dims = scalar();
        let sensor = CoefficientSet::sensor_builder("s", dims, vec![1.0], vec![0.0])
            .drift(|_, x, _, out| out[0] = -x[0])
            .correlated_diffusion(|_, x, _, out| out[0] = 1.0 + 0.1 * libm::tanh(x[0]))
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap();
        let plain = CoefficientSet::builder("p", dims)
            .drift(|_, x, _, out| out[0] = -x[0])
            .correlated_diffusion(|_, x, _, out| out[0] = 1.0 + 0.1 * libm::tanh(x[0]))
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap();
        let law = EmpiricalMeasure::dirac(&[0.0]);
        let s = FilterState::from_points(1, vec![-0.4, 0.3, 1.2]).unwrap();
        let dw = [0.01, -0.03, 0.02];
        let a = sensor_variant_step(&sensor, &law, &s, &[0.07], 0.01, &dw).unwrap();
        let b = zakai_step(&plain, &law, &s, &[0.07], 0.01, &dw).unwrap();
        assert_eq!(a, b);
        assert!(sensor_variant_step(&plain, &law, &s, &[0.07], 0.01, &dw).is_err());
    }
}
