//! Law-level checks over ensembles of filter runs.
//!
//! Under the reference measure the innovation `Ṽ` is a Brownian motion
//! independent of the signal, so independent runs driven by freshly drawn
//! innovations sample the law `Ξ_t` of the unnormalized filter. The checks here
//! compare ensemble averages with the generator `𝐋` acting on measure
//! functionals.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter::state::FilterState;
use crate::filter::zakai::{run_filter_with, FilterConfig, FilterRun};
use crate::model::coefficients::{CoefficientSet, Dims, Evaluation};
use crate::model::functional::MeasureFunctional;
use crate::model::generator::{lbf_from_terms, weak_terms};
use crate::model::testfn::SharedTestFunction;
use crate::par;
use crate::rng::derive_seed;
use crate::sde::{reference_innovation, InitialLaw, LawFlow, SimConfig};

/// The smallest ensemble the law-level checks accept.
pub const MIN_RUNS: usize = 20;

#[derive(Clone, Debug)]
enum Source {
    Recorded(Vec<FilterRun>),
    Generated { init: InitialLaw, sim: SimConfig, n_filt: usize, runs: usize, seed: u64 },
}

/// Independent filter runs sampling `Ξ_t`.
#[derive(Clone, Debug)]
pub struct LawEnsemble<'a> {
    c: CoefficientSet,
    law: &'a LawFlow,
    dt: f64,
    source: Source,
}

impl<'a> LawEnsemble<'a> {
    /// Runs generated on demand: run `j` starts from `n_filt` draws of `init`
    /// and is driven by its own reference-measure innovation. Nothing is kept
    /// in memory between checks; every check regenerates the same runs.
    pub fn generated(
        c: &CoefficientSet,
        law: &'a LawFlow,
        init: InitialLaw,
        sim: SimConfig,
        n_filt: usize,
        runs: usize,
        seed: u64,
    ) -> Result<Self> {
        if runs < MIN_RUNS {
            return Err(Error::EnsembleTooSmall { required: MIN_RUNS, found: runs });
        }
        sim.steps()?;
        Ok(Self { c: c.filter_form()?, law, dt: sim.dt, source: Source::Generated { init, sim, n_filt, runs, seed } })
    }

    /// Stored runs, which must have been driven by reference-measure innovations.
    pub fn recorded(c: &CoefficientSet, law: &'a LawFlow, runs: Vec<FilterRun>) -> Result<Self> {
        if runs.len() < MIN_RUNS {
            return Err(Error::EnsembleTooSmall { required: MIN_RUNS, found: runs.len() });
        }
        if runs.iter().any(|r| r.resampled) {
            return Err(Error::Resampled);
        }
        let dt = runs[0].dt;
        Ok(Self { c: c.filter_form()?, law, dt, source: Source::Recorded(runs) })
    }

    pub fn len(&self) -> usize {
        match &self.source {
            Source::Recorded(r) => r.len(),
            Source::Generated { runs, .. } => *runs,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generates run `j` in full.
    pub fn run(&self, j: usize) -> Result<FilterRun> {
        let mut states = Vec::new();
        let dvtilde = self.replay(j, |_, s| {
            states.push(s.clone());
            Ok(())
        })?;
        Ok(FilterRun { dt: self.dt, states, dvtilde, resampled: false })
    }

    /// Feeds every state of run `j` to `observe`; returns the run's innovations.
    fn replay(&self, j: usize, mut observe: impl FnMut(usize, &FilterState) -> Result<()>) -> Result<Vec<f64>> {
        match &self.source {
            Source::Recorded(runs) => {
                runs[j].states.iter().enumerate().try_for_each(|(k, s)| observe(k, s))?;
                Ok(runs[j].dvtilde.clone())
            }
            Source::Generated { init, sim, n_filt, seed, .. } => {
                let steps = sim.steps()?;
                let run_seed = derive_seed(*seed, &[j as u64]);
                let dvtilde = reference_innovation(self.c.dims().m, steps, sim.dt, sim.noise_substeps, *seed, j as u64);
                let initial = FilterState::sample(init, *n_filt, run_seed)?;
                let resampled = run_filter_with(&self.c, self.law, initial, &dvtilde, sim, &FilterConfig::new(*n_filt, run_seed), observe)?;
                debug_assert!(!resampled);
                Ok(dvtilde)
            }
        }
    }

    /// Applies a per-run summary to every run, in run order.
    fn map_runs<T: Send>(&self, summary: impl Fn(usize, &Self) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        par::map_indexed(self.len(), || (), |_, j| summary(j, self)).into_iter().collect()
    }
}

/// Mean and standard error of a per-run statistic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: impl Iterator<Item = f64> + Clone) -> Self {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = if n > 1.0 { xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, stderr: libm::sqrt(var / n) }
    }

    /// `|mean| ≤ sigmas · stderr`.
    pub fn consistent_with_zero(&self, sigmas: f64) -> bool {
        self.mean.abs() <= sigmas * self.stderr
    }
}

/// `R(t_k) = E[G(μ̂_{t_k})] - E[G(μ̂_0)] - Σ_{j<k} E[𝐋G(μ̂_{t_j})] dt` with its
/// Monte Carlo standard error, one entry per grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct FpeReport {
    pub times: Vec<f64>,
    pub residual: Vec<Estimate>,
}

impl FpeReport {
    pub fn terminal(&self) -> Estimate {
        *self.residual.last().expect("empty report")
    }

    pub fn passes(&self, sigmas: f64) -> bool {
        self.terminal().consistent_with_zero(sigmas)
    }
}

fn check_functional(c: &CoefficientSet, g: &MeasureFunctional) -> Result<()> {
    let n = c.dims().n;
    match g.phis.iter().find(|p| p.dim() != n) {
        Some(p) => Err(Error::DimensionMismatch { expected: n, found: p.dim() }),
        None => Ok(()),
    }
}

/// Per-run residual series, `series[run][functional][k]`.
fn run_series(ens: &LawEnsemble, battery: &[MeasureFunctional]) -> Result<Vec<Vec<Vec<f64>>>> {
    for g in battery {
        check_functional(&ens.c, g)?;
    }
    let m = ens.c.dims().m;
    let phis: Vec<SharedTestFunction> = battery.iter().flat_map(|g| g.phis.iter().cloned()).collect();
    let offsets: Vec<usize> = battery
        .iter()
        .scan(0, |acc, g| {
            let start = *acc;
            *acc += g.arity();
            Some(start)
        })
        .collect();
    ens.map_runs(|j, ens| {
        let mut series: Vec<Vec<f64>> = vec![Vec::new(); battery.len()];
        let mut start = vec![0.0; battery.len()];
        let mut integral = vec![0.0; battery.len()];
        ens.replay(j, |k, s| {
            let nu = s.measure()?;
            let t = k as f64 * ens.dt;
            let all = weak_terms(&ens.c, t, &phis, &nu, ens.law.at(k))?;
            for (b, g) in battery.iter().enumerate() {
                let terms = all.slice(offsets[b], g.arity(), m);
                let value = g.outer.value(&terms.values);
                if k == 0 {
                    start[b] = value;
                }
                series[b].push(value - start[b] - integral[b]);
                integral[b] += lbf_from_terms(g, &terms, m) * ens.dt;
            }
            Ok(())
        })?;
        Ok(series)
    })
}

/// The residual for several functionals from one pass over the ensemble.
pub fn fpe_residuals(ens: &LawEnsemble, battery: &[MeasureFunctional]) -> Result<Vec<FpeReport>> {
    let per_run = run_series(ens, battery)?;
    let steps = per_run[0][0].len();
    Ok((0..battery.len())
        .map(|b| FpeReport {
            times: (0..steps).map(|k| k as f64 * ens.dt).collect(),
            residual: (0..steps).map(|k| Estimate::from_samples(per_run.iter().map(|r| r[b][k]))).collect(),
        })
        .collect())
}

/// Each run's own terminal residual, `out[run][functional]`. Averages of
/// these over any subset of runs are the terminal residuals of the
/// sub-ensemble, which lets one pass serve nested ensemble sizes.
pub fn fpe_run_terminals(ens: &LawEnsemble, battery: &[MeasureFunctional]) -> Result<Vec<Vec<f64>>> {
    Ok(run_series(ens, battery)?
        .into_iter()
        .map(|run| run.into_iter().map(|s| s.last().copied().unwrap_or(0.0)).collect())
        .collect())
}

pub fn fpe_residual(ens: &LawEnsemble, g: &MeasureFunctional) -> Result<FpeReport> {
    Ok(fpe_residuals(ens, core::slice::from_ref(g))?.remove(0))
}

/// Moment checks on the projections `ξ^u_t = ⟨μ̂_t, φ_u⟩`.
///
/// `drift[u]` estimates `E[ξ^u_T - ξ^u_0 - ∫β^u dt]` and `covariation[(u,v)]`
/// estimates `E[Σ (Δξ - β dt)^u (Δξ - β dt)^v - ∫(α^{uv} + π^{uv}) dt]` for
/// `u ≤ v`, both of which vanish for a weak solution. Here
/// `β^u = ⟨μ̂, 𝓛φ_u⟩`, `α^{uv} = Σ_l A^l_u A^l_v` with
/// `A^l_u = ⟨μ̂, φ_u h^l + ∇φ_u σ1^{·l}⟩`, and `π` is the covariation that the
/// cloud's own particle noise contributes (see [`weak_terms`]); it is of order
/// `1/N` and vanishes when `σ0 = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedReport {
    pub drift: Vec<Estimate>,
    pub covariation: Vec<((usize, usize), Estimate)>,
}

impl ProjectedReport {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.drift.iter().chain(self.covariation.iter().map(|(_, e)| e)).all(|e| e.consistent_with_zero(sigmas))
    }
}

pub fn projected_sde_check(ens: &LawEnsemble, phis: &[SharedTestFunction]) -> Result<ProjectedReport> {
    let n = ens.c.dims().n;
    if let Some(p) = phis.iter().find(|p| p.dim() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: p.dim() });
    }
    let k = phis.len();
    let m = ens.c.dims().m;
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|u| (u..k).map(move |v| (u, v))).collect();
    let per_run = ens.map_runs(|j, ens| {
        let mut drift = vec![0.0; k];
        let mut cov = vec![0.0; pairs.len()];
        let mut previous: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
        ens.replay(j, |step, s| {
            let nu = s.measure()?;
            let terms = weak_terms(&ens.c, step as f64 * ens.dt, phis, &nu, ens.law.at(step))?;
            if let Some((xi, beta, rate)) = previous.take() {
                let inc: Vec<f64> = (0..k).map(|u| terms.values[u] - xi[u] - beta[u] * ens.dt).collect();
                drift.iter_mut().zip(&inc).for_each(|(d, i)| *d += i);
                for (slot, &(u, v)) in pairs.iter().enumerate() {
                    cov[slot] += inc[u] * inc[v] - rate[u * k + v] * ens.dt;
                }
            }
            let mut rate = terms.particle_noise.clone();
            for u in 0..k {
                for v in 0..k {
                    rate[u * k + v] += (0..m).map(|l| terms.loading[u * m + l] * terms.loading[v * m + l]).sum::<f64>();
                }
            }
            previous = Some((terms.values, terms.drift, rate));
            Ok(())
        })?;
        Ok((drift, cov))
    })?;
    Ok(ProjectedReport {
        drift: (0..k).map(|u| Estimate::from_samples(per_run.iter().map(|r| r.0[u]))).collect(),
        covariation: pairs.iter().enumerate().map(|(slot, &p)| (p, Estimate::from_samples(per_run.iter().map(|r| r.1[slot])))).collect(),
    })
}

/// `E ∫_0^T ⟨μ̂_t, |b1| + |h|² + ‖σ1‖² + ‖σ0σ0ᵀ‖⟩ dt` (Euclidean and Frobenius norms).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrabilityReport {
    pub value: Estimate,
    pub cap: f64,
}

/// Fails with [`Error::IntegrabilityCap`] unless the estimate is finite and at most `cap`.
pub fn integrability_check(ens: &LawEnsemble, cap: f64) -> Result<IntegrabilityReport> {
    let dims = ens.c.dims();
    let Dims { n, d, .. } = dims;
    let per_run = ens.map_runs(|j, ens| {
        // Left-point sum: the last state's contribution is never added.
        let (mut total, mut pending) = (0.0, 0.0);
        ens.replay(j, |k, s| {
            total += pending;
            let t = k as f64 * ens.dt;
            let inv = ens.c.sigma2_inverse(t)?;
            let nu = s.measure()?;
            let mut e = Evaluation::new(dims);
            let mut acc = 0.0;
            for (x, w) in nu.atoms() {
                ens.c.evaluate(t, x, ens.law.at(k), &inv, &mut e);
                let b1 = libm::sqrt(e.b1.iter().map(|v| v * v).sum());
                let h2: f64 = e.h.iter().map(|v| v * v).sum();
                let s1: f64 = e.sigma1.iter().map(|v| v * v).sum();
                let mut s0 = 0.0;
                for r in 0..n {
                    for q in 0..n {
                        let a: f64 = (0..d).map(|col| e.sigma0[r * d + col] * e.sigma0[q * d + col]).sum();
                        s0 += a * a;
                    }
                }
                acc += w * (b1 + h2 + s1 + libm::sqrt(s0));
            }
            pending = acc * ens.dt;
            Ok(())
        })?;
        Ok(total)
    })?;
    let value = Estimate::from_samples(per_run.iter().copied());
    if !(value.mean <= cap) {
        return Err(Error::IntegrabilityCap { value: value.mean, cap });
    }
    Ok(IntegrabilityReport { value, cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::sync::Arc;
    use crate::model::functional::Outer;
    use crate::model::testfn::{Polynomial, Windowed};
    use crate::sde::simulate_law_flow;

    fn scalar() -> Dims {
        Dims { n: 1, d: 1, m: 1 }
    }

    fn bounded() -> CoefficientSet {
        CoefficientSet::builder("bounded", scalar())
            .drift(|_, x, mu, out| out[0] = -libm::tanh(x[0]) + 0.2 * libm::tanh(mu.mean()[0]))
            .signal_diffusion(|_, _, _, out| out[0] = 0.5)
            .correlated_diffusion(|_, _, _, out| out[0] = 0.3)
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap()
    }

    fn ensemble<'a>(c: &CoefficientSet, law: &'a LawFlow, runs: usize, seed: u64) -> LawEnsemble<'a> {
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        LawEnsemble::generated(c, law, init, SimConfig::new(0.2, 0.01, 100, 0), 40, runs, seed).unwrap()
    }

    fn law_for(c: &CoefficientSet) -> LawFlow {
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        simulate_law_flow(c, &init, &SimConfig::new(0.2, 0.01, 100, 0)).unwrap()
    }

    #[test]
    fn ensembles_need_enough_runs() {
        let c = bounded();
        let law = law_for(&c);
        let init = InitialLaw::PointMass { at: vec![0.0] };
        assert!(matches!(
            LawEnsemble::generated(&c, &law, init, SimConfig::new(0.2, 0.01, 10, 0), 10, 5, 0),
            Err(Error::EnsembleTooSmall { .. })
        ));
    }

    #[test]
    fn generated_runs_are_reproducible() {
        let c = bounded();
        let law = law_for(&c);
        let ens = ensemble(&c, &law, 20, 3);
        assert_eq!(ens.run(4).unwrap(), ens.run(4).unwrap());
        assert_ne!(ens.run(4).unwrap(), ens.run(5).unwrap());
    }

    #[test]
    fn mass_functional_is_a_martingale() {
        // With φ = 1 the drift vanishes, so the residual is pure noise.
        let c = bounded();
        let law = law_for(&c);
        let ens = ensemble(&c, &law, 100, 1);
        let one = MeasureFunctional::linear(Arc::new(Polynomial::constant(1, 1.0)));
        let report = fpe_residual(&ens, &one).unwrap();
        assert_eq!(report.residual[0].mean, 0.0);
        assert!(report.passes(3.0), "{:?}", report.terminal());
    }

    #[test]
    fn recorded_and_generated_agree() {
        let c = bounded();
        let law = law_for(&c);
        let ens = ensemble(&c, &law, 20, 2);
        let runs: Vec<FilterRun> = (0..20).map(|j| ens.run(j).unwrap()).collect();
        let rec = LawEnsemble::recorded(&c, &law, runs).unwrap();
        let g = MeasureFunctional::new(
            Arc::new(Outer::Tanh { coeffs: vec![1.0], offset: 0.0, scale: 1.0 }),
            vec![Arc::new(Windowed::coordinate(1, 0, 3.0, 5.0))],
        );
        assert_eq!(fpe_residual(&ens, &g).unwrap(), fpe_residual(&rec, &g).unwrap());
    }

    #[test]
    fn mass_projection_matches_the_mass_equation() {
        // k = 1, φ = 1: β = 0 and α = ⟨μ̂, h⟩², so the check is the mass
        // equation's quadratic variation.
        let c = bounded();
        let law = law_for(&c);
        let ens = ensemble(&c, &law, 200, 5);
        let report = projected_sde_check(&ens, &[Arc::new(Polynomial::constant(1, 1.0))]).unwrap();
        assert!(report.passes(3.0), "{report:?}");
    }

    #[test]
    fn integrability_is_bounded_for_bounded_coefficients() {
        let c = bounded();
        let law = law_for(&c);
        let ens = ensemble(&c, &law, 20, 6);
        let report = integrability_check(&ens, 1e6).unwrap();
        // |b1| ≤ 1.2, |h|² ≤ 1, σ1² = 0.09, σ0² = 0.25; mass stays near one.
        assert!(report.value.mean > 0.0 && report.value.mean < 2.54 * 0.2 * 1.5);
        assert!(matches!(integrability_check(&ens, 1e-3), Err(Error::IntegrabilityCap { .. })));
    }
}
