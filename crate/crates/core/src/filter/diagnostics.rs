//! Pathwise self-consistency checks on a filter run.
//!
//! Each check is an accumulator fed one state per grid time, so long runs can
//! be checked without keeping every state; the `*_check` functions replay a
//! stored [`FilterRun`] through the same accumulators.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::state::FilterState;
use super::zakai::FilterRun;
use crate::error::{Error, Result};
use crate::model::coefficients::{CoefficientSet, Dims, Evaluation};
use crate::model::functional::CylindricalStateFunctional;
use crate::model::generator::{lcal_from_values, law_drift_moments, weak_terms};
use crate::model::testfn::{SharedTestFunction, TestFunction};
use crate::par;
use crate::sde::LawFlow;

/// `⟨μ̂, φ⟩ / ⟨μ̂, 1⟩`.
pub fn ks_normalize(state: &FilterState, phi: &dyn TestFunction) -> Result<f64> {
    state.normalize(phi)
}

/// Time series of `residual_k` together with `sup_k |residual_k|`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSeries {
    pub residual: Vec<f64>,
}

impl ResidualSeries {
    pub fn sup(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }

    pub fn terminal(&self) -> f64 {
        *self.residual.last().unwrap_or(&0.0)
    }
}

fn innovation_row(dvtilde: &[f64], m: usize, k: usize) -> Option<&[f64]> {
    dvtilde.get(k * m..(k + 1) * m)
}

fn require_signal_form(c: &CoefficientSet) -> Result<CoefficientSet> {
    c.filter_form()
}

const CHUNK: usize = 256;

/// Sums `f(i)` (each a vector of `width`) over `0..n` in fixed chunks.
fn chunked_sum<W, I, F>(n: usize, width: usize, init: I, f: F) -> Vec<f64>
where
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize, &mut [f64]) + Sync + Send,
{
    let partial = par::map_indexed(n.div_ceil(CHUNK), init, |w, chunk| {
        let mut acc = vec![0.0; width];
        for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
            f(w, i, &mut acc);
        }
        acc
    });
    let mut total = vec![0.0; width];
    for p in partial {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

/// Compares the particle mass with `1 + ∫ ⟨μ̂_s, 1⟩ ⟨Λ̂_s, h⟩ · dṼ_s`
/// (left-point sums).
pub struct MassCheck<'a> {
    c: CoefficientSet,
    law: &'a LawFlow,
    dvtilde: &'a [f64],
    dt: f64,
    integral: f64,
    pending: f64,
    residual: Vec<f64>,
}

impl<'a> MassCheck<'a> {
    pub fn new(c: &CoefficientSet, law: &'a LawFlow, dvtilde: &'a [f64], dt: f64) -> Result<Self> {
        Ok(Self { c: require_signal_form(c)?, law, dvtilde, dt, integral: 1.0, pending: 0.0, residual: Vec::new() })
    }

    pub fn observe(&mut self, k: usize, state: &FilterState) -> Result<()> {
        let mass = state.mass();
        self.integral += self.pending;
        self.residual.push(mass - self.integral);
        let Dims { n, m, .. } = self.c.dims();
        self.pending = 0.0;
        if let Some(dv) = innovation_row(self.dvtilde, m, k) {
            let t = k as f64 * self.dt;
            let inv = self.c.sigma2_inverse(t)?;
            let law = self.law.at(k);
            let w = state.normalized_weights()?;
            let c = &self.c;
            let lam_h = chunked_sum(state.len(), m, || Evaluation::new(c.dims()), |e, i, acc| {
                c.evaluate(t, &state.particles[i * n..(i + 1) * n], law, &inv, e);
                acc.iter_mut().zip(&e.h).for_each(|(a, h)| *a += w[i] * h);
            });
            self.pending = mass * lam_h.iter().zip(dv).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(())
    }

    pub fn finish(self) -> ResidualSeries {
        ResidualSeries { residual: self.residual }
    }
}

/// Checks `⟨μ̂_t,φ⟩ = ⟨μ̂_0,φ⟩ + ∫⟨μ̂_s, 𝓛φ⟩ ds + ∫⟨μ̂_s, φh + ∇φ σ1⟩ · dṼ_s`
/// along the run.
pub struct ZakaiCheck<'a> {
    c: CoefficientSet,
    law: &'a LawFlow,
    dvtilde: &'a [f64],
    dt: f64,
    phis: Vec<SharedTestFunction>,
    start: Vec<f64>,
    integral: Vec<f64>,
    pending: Vec<f64>,
    residual: Vec<Vec<f64>>,
}

impl<'a> ZakaiCheck<'a> {
    /// Tracks the residual of every function in `phis` from one pass.
    pub fn new(
        c: &CoefficientSet,
        law: &'a LawFlow,
        dvtilde: &'a [f64],
        dt: f64,
        phis: Vec<SharedTestFunction>,
    ) -> Result<Self> {
        let k = phis.len();
        Ok(Self {
            c: require_signal_form(c)?,
            law,
            dvtilde,
            dt,
            phis,
            start: vec![0.0; k],
            integral: vec![0.0; k],
            pending: vec![0.0; k],
            residual: vec![Vec::new(); k],
        })
    }

    pub fn observe(&mut self, k: usize, state: &FilterState) -> Result<()> {
        let m = self.c.dims().m;
        let mu = state.measure()?;
        let t = k as f64 * self.dt;
        let terms = weak_terms(&self.c, t, &self.phis, &mu, self.law.at(k))?;
        let dv = innovation_row(self.dvtilde, m, k);
        for u in 0..self.phis.len() {
            if k == 0 {
                self.start[u] = terms.values[u];
            }
            self.integral[u] += self.pending[u];
            self.residual[u].push(terms.values[u] - self.start[u] - self.integral[u]);
            self.pending[u] = match dv {
                Some(dv) => {
                    terms.drift[u] * self.dt
                        + terms.loading[u * m..(u + 1) * m].iter().zip(dv).map(|(a, b)| a * b).sum::<f64>()
                }
                None => 0.0,
            };
        }
        Ok(())
    }

    /// One series per test function, in the order given.
    pub fn finish(self) -> Vec<ResidualSeries> {
        self.residual.into_iter().map(|residual| ResidualSeries { residual }).collect()
    }
}

/// Outcome of the normalized-filter consistency check for one functional.
#[derive(Clone, Debug, PartialEq)]
pub struct KsReport {
    /// `⟨Λ̂_{t_k}, F(·, μ_{t_k})⟩`.
    pub filter_value: Vec<f64>,
    /// The right-hand side rebuilt from increments.
    pub reconstruction: Vec<f64>,
    /// Monte Carlo standard error of the particle-noise martingale at each time,
    /// `sqrt(Σ_s Σ_i w̄_i² |∂_xF σ0|² dt)`.
    pub standard_error: Vec<f64>,
}

impl KsReport {
    pub fn residual(&self) -> Vec<f64> {
        self.filter_value.iter().zip(&self.reconstruction).map(|(a, b)| a - b).collect()
    }

    pub fn terminal_residual(&self) -> f64 {
        self.filter_value.last().unwrap_or(&0.0) - self.reconstruction.last().unwrap_or(&0.0)
    }

    pub fn terminal_standard_error(&self) -> f64 {
        *self.standard_error.last().unwrap_or(&0.0)
    }

    /// `|residual(T)| ≤ max(sigmas · SE(T), relative · |⟨Λ̂_T, F⟩|)`.
    pub fn passes(&self, sigmas: f64, relative: f64) -> bool {
        let value = self.filter_value.last().copied().unwrap_or(0.0);
        self.terminal_residual().abs() <= (sigmas * self.terminal_standard_error()).max(relative * value.abs())
    }
}

/// Checks the normalized filter against
/// `⟨Λ_t,F⟩ = ⟨Λ_0,F⟩ + ∫⟨Λ,𝕃F⟩ds + ∫⟨Λ, ∂_xF σ1⟩·dV̄ + ∫(⟨Λ,Fh⟩ - ⟨Λ,F⟩⟨Λ,h⟩)·dV̄`,
/// with innovation `dV̄ = dṼ - ⟨Λ,h⟩ dt` and the law flow in the measure slot.
pub struct KsCheck<'a> {
    c: CoefficientSet,
    law: &'a LawFlow,
    dvtilde: &'a [f64],
    dt: f64,
    f: Arc<CylindricalStateFunctional>,
    pending: f64,
    pending_var: f64,
    report: KsReport,
}

impl<'a> KsCheck<'a> {
    pub fn new(
        c: &CoefficientSet,
        law: &'a LawFlow,
        dvtilde: &'a [f64],
        dt: f64,
        f: Arc<CylindricalStateFunctional>,
    ) -> Result<Self> {
        let c = require_signal_form(c)?;
        if f.dim() != c.dims().n {
            return Err(Error::DimensionMismatch { expected: c.dims().n, found: f.dim() });
        }
        Ok(Self {
            c,
            law,
            dvtilde,
            dt,
            f,
            pending: 0.0,
            pending_var: 0.0,
            report: KsReport { filter_value: Vec::new(), reconstruction: Vec::new(), standard_error: Vec::new() },
        })
    }

    pub fn observe(&mut self, k: usize, state: &FilterState) -> Result<()> {
        let dims = self.c.dims();
        let Dims { n, d, m } = dims;
        let t = k as f64 * self.dt;
        let law = self.law.at(k);
        let z = self.f.moments(law);
        let law_drift = law_drift_moments(&self.c, t, &self.f.inner, law)?;
        let inv = self.c.sigma2_inverse(t)?;
        let w = state.normalized_weights()?;
        let (c, f) = (&self.c, &self.f);
        // Layout: [F, 𝕃F, |∂F σ0|² w̄, (∂F σ1)_j, (F h)_j, h_j]
        let width = 3 + 3 * m;
        let sums = chunked_sum(state.len(), width, || Evaluation::new(dims), |e, i, acc| {
            let x = &state.particles[i * n..(i + 1) * n];
            c.evaluate(t, x, law, &inv, e);
            let dv = f.derivatives_with(x, &z);
            let lbb = lcal_from_values(dims, e, &dv.grad_x, &dv.hess_x)
                + dv.dz.iter().zip(&law_drift).map(|(a, b)| a * b).sum::<f64>();
            let wi = w[i];
            acc[0] += wi * dv.value;
            acc[1] += wi * lbb;
            let mut noise = 0.0;
            for k in 0..d {
                let g: f64 = (0..n).map(|r| dv.grad_x[r] * e.sigma0[r * d + k]).sum();
                noise += g * g;
            }
            acc[2] += wi * wi * noise;
            for j in 0..m {
                let g: f64 = (0..n).map(|r| dv.grad_x[r] * e.sigma1[r * m + j]).sum();
                acc[3 + j] += wi * g;
                acc[3 + m + j] += wi * dv.value * e.h[j];
                acc[3 + 2 * m + j] += wi * e.h[j];
            }
        });
        let value = sums[0];
        let r = &mut self.report;
        if k == 0 {
            r.reconstruction.push(value);
            r.standard_error.push(0.0);
        } else {
            let prev = *r.reconstruction.last().unwrap();
            let prev_se = *r.standard_error.last().unwrap();
            let prev_var = prev_se * prev_se;
            r.reconstruction.push(prev + self.pending);
            r.standard_error.push(libm::sqrt(prev_var + self.pending_var));
        }
        r.filter_value.push(value);
        self.pending = 0.0;
        self.pending_var = 0.0;
        if let Some(dvt) = innovation_row(self.dvtilde, m, k) {
            let mut inc = sums[1] * self.dt;
            for j in 0..m {
                let lam_h = sums[3 + 2 * m + j];
                let dvbar = dvt[j] - lam_h * self.dt;
                inc += (sums[3 + j] + sums[3 + m + j] - value * lam_h) * dvbar;
            }
            self.pending = inc;
            self.pending_var = sums[2] * self.dt;
        }
        Ok(())
    }

    pub fn finish(self) -> KsReport {
        self.report
    }
}

fn replay(run: &FilterRun, mut observe: impl FnMut(usize, &FilterState) -> Result<()>) -> Result<()> {
    if run.resampled {
        return Err(Error::Resampled);
    }
    run.states.iter().enumerate().try_for_each(|(k, s)| observe(k, s))
}

pub fn mass_process_check(c: &CoefficientSet, law: &LawFlow, run: &FilterRun) -> Result<ResidualSeries> {
    let mut check = MassCheck::new(c, law, &run.dvtilde, run.dt)?;
    replay(run, |k, s| check.observe(k, s))?;
    Ok(check.finish())
}

pub fn zakai_residual(c: &CoefficientSet, law: &LawFlow, run: &FilterRun, phi: SharedTestFunction) -> Result<ResidualSeries> {
    let mut check = ZakaiCheck::new(c, law, &run.dvtilde, run.dt, vec![phi])?;
    replay(run, |k, s| check.observe(k, s))?;
    Ok(check.finish().remove(0))
}

pub fn ks_residual(c: &CoefficientSet, law: &LawFlow, run: &FilterRun, f: Arc<CylindricalStateFunctional>) -> Result<KsReport> {
    let mut check = KsCheck::new(c, law, &run.dvtilde, run.dt, f)?;
    replay(run, |k, s| check.observe(k, s))?;
    Ok(check.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::zakai::{run_filter, FilterConfig};
    use crate::model::functional::{Coupling, Outer};
    use crate::model::testfn::{GaussianBump, Polynomial};
    use crate::sde::{simulate_law_flow, simulate_truth, InitialLaw, SimConfig};

    fn scalar() -> Dims {
        Dims { n: 1, d: 1, m: 1 }
    }

    #[test]
    fn constant_observation_residual_is_the_euler_error_of_the_exponential() {
        let h = 1.3;
        let c = CoefficientSet::builder("const", scalar()).observation_drift(move |_, _, _, out| out[0] = h).build().unwrap();
        let init = InitialLaw::PointMass { at: vec![0.0] };
        let sim = SimConfig::new(1.0, 0.01, 2, 4);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        let run = run_filter(&c, &law, FilterState::sample(&init, 3, 0).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(3, 0))
            .unwrap();
        let check = mass_process_check(&c, &law, &run).unwrap();
        // Independent oracle: exact geometric Brownian motion against its Euler scheme.
        let (mut exact_log, mut sum) = (0.0, 1.0);
        for k in 0..truth.steps() {
            let dv = truth.dvtilde[k];
            let exact = libm::exp(exact_log);
            assert!((check.residual[k] - (exact - sum)).abs() < 1e-12 * (1.0 + exact));
            sum += exact * h * dv;
            exact_log += h * dv - 0.5 * h * h * sim.dt;
        }
        assert!(check.sup() > 0.0);
    }

    #[test]
    fn residuals_vanish_at_time_zero() {
        let c = CoefficientSet::builder("ou", scalar())
            .drift(|_, x, _, out| out[0] = -x[0])
            .signal_diffusion(|_, _, _, out| out[0] = 1.0)
            .observation_drift(|_, x, _, out| out[0] = x[0])
            .build()
            .unwrap();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![0.5] };
        let sim = SimConfig::new(0.2, 0.01, 50, 4);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        let run = run_filter(&c, &law, FilterState::sample(&init, 200, 0).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(200, 0))
            .unwrap();
        let phi: SharedTestFunction = Arc::new(GaussianBump::density(vec![0.0], 1.0));
        let z = zakai_residual(&c, &law, &run, phi.clone()).unwrap();
        assert_eq!(z.residual.len(), run.states.len());
        assert_eq!(z.residual[0], 0.0);
        let f = Arc::new(CylindricalStateFunctional::new(
            phi,
            Coupling::Product,
            Arc::new(Outer::Tanh { coeffs: vec![1.0], offset: 0.0, scale: 1.0 }),
            vec![Arc::new(Polynomial::affine(0.0, &[1.0]))],
        ));
        let ks = ks_residual(&c, &law, &run, f).unwrap();
        assert_eq!(ks.residual()[0], 0.0);
        assert!(ks.terminal_standard_error() > 0.0);
    }

    #[test]
    fn deterministic_cloud_has_no_particle_noise() {
        // With σ0 = 0 and a linear test function the scheme is exact in φ up to
        // the second-order terms in ΔṼ, which vanish when h = 0 and σ1 is constant.
        let c = CoefficientSet::builder("shift", scalar())
            .drift(|_, _, _, out| out[0] = 0.5)
            .correlated_diffusion(|_, _, _, out| out[0] = 0.7)
            .build()
            .unwrap();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let sim = SimConfig::new(0.5, 0.01, 10, 4);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        let run = run_filter(&c, &law, FilterState::sample(&init, 100, 0).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(100, 0))
            .unwrap();
        let z = zakai_residual(&c, &law, &run, Arc::new(Polynomial::affine(0.2, &[1.0]))).unwrap();
        assert!(z.sup() < 1e-12, "{}", z.sup());
    }

    #[test]
    fn resampled_runs_are_refused() {
        let c = CoefficientSet::builder("z", scalar()).build().unwrap();
        let law = LawFlow::new(0.1, vec![crate::model::measure::EmpiricalMeasure::dirac(&[0.0]); 2]);
        let run = FilterRun { dt: 0.1, states: vec![FilterState::from_points(1, vec![0.0]).unwrap(); 2], dvtilde: vec![0.0], resampled: true };
        assert_eq!(mass_process_check(&c, &law, &run), Err(Error::Resampled));
    }
}
