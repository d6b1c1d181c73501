//! Distance between two particle filters driven by the same noise.

use alloc::vec::Vec;

use super::state::FilterState;
use super::zakai::{run_filter_with, FilterConfig};
use crate::error::{Error, Result};
use crate::model::coefficients::CoefficientSet;
use crate::mollifier::{smooth_atoms, GridFunction, MollifierConfig};
use crate::sde::{LawFlow, SimConfig};

/// `‖S_ε(μ̂¹_t - μ̂²_t)‖_ℍ` on the grid, and the mollifier that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GapSeries {
    pub times: Vec<f64>,
    pub gap: Vec<f64>,
    pub mollifier: MollifierConfig,
}

impl GapSeries {
    pub fn terminal(&self) -> f64 {
        *self.gap.last().unwrap_or(&0.0)
    }
}

fn smooth_state(s: &FilterState, cfg: &MollifierConfig) -> Result<GridFunction> {
    let top = s.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = libm::exp(top) / s.len() as f64;
    let w: Vec<f64> = s.log_weights.iter().map(|l| libm::exp(l - top) * scale).collect();
    smooth_atoms(s.dim(), &s.particles, &w, &s.label_order(), cfg)
}

/// Runs two filters from `first` and `second` with the same innovations and
/// the same particle noises (particle streams are keyed by label, so both
/// initial clouds must carry the same labels), and measures their smoothed
/// distance at every grid time. Atoms are smoothed in label order, so
/// relabelled copies of one cloud give an exact zero.
///
/// Without an explicit mollifier, `ε` follows the spread of `first` and the
/// grid covers every particle of both runs.
#[allow(clippy::too_many_arguments)]
pub fn pathwise_uniqueness_gap(
    c: &CoefficientSet,
    law: &LawFlow,
    dvtilde: &[f64],
    first: FilterState,
    second: FilterState,
    sim: &SimConfig,
    cfg: &FilterConfig,
    mollifier: Option<MollifierConfig>,
) -> Result<GapSeries> {
    let mut a = first.labels.clone();
    let mut b = second.labels.clone();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::NoiseMismatch("the two initial clouds carry different particle labels".into()));
    }
    let mut one = Vec::new();
    let mut two = Vec::new();
    let first_points = first.particles.clone();
    let dim = first.dim();
    if run_filter_with(c, law, first, dvtilde, sim, cfg, |_, s| {
        one.push(s.clone());
        Ok(())
    })? || run_filter_with(c, law, second, dvtilde, sim, cfg, |_, s| {
        two.push(s.clone());
        Ok(())
    })? {
        return Err(Error::Resampled);
    }
    let mollifier = match mollifier {
        Some(m) => m,
        None => {
            let reach = one.iter().chain(&two).flat_map(|s| s.particles.iter()).fold(0.0_f64, |r, x| r.max(x.abs()));
            MollifierConfig::for_points(dim, &first_points, 0.0)?.widened(reach)?
        }
    };
    let mut series = GapSeries { times: Vec::with_capacity(one.len()), gap: Vec::with_capacity(one.len()), mollifier };
    for (s1, s2) in one.iter().zip(&two) {
        let diff = smooth_state(s1, &mollifier)?.difference(&smooth_state(s2, &mollifier)?)?;
        series.times.push(s1.time);
        series.gap.push(diff.norm());
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coefficients::Dims;
    use crate::sde::{simulate_law_flow, simulate_truth, InitialLaw};

    fn setup() -> (CoefficientSet, LawFlow, Vec<f64>, InitialLaw, SimConfig) {
        let c = CoefficientSet::builder("ou", Dims { n: 1, d: 1, m: 1 })
            .drift(|_, x, mu, out| out[0] = -x[0] + 0.2 * mu.mean()[0])
            .signal_diffusion(|_, _, _, out| out[0] = 0.7)
            .correlated_diffusion(|_, _, _, out| out[0] = 0.3)
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap();
        let init = InitialLaw::Gaussian { mean: vec![0.0], std: vec![1.0] };
        let sim = SimConfig::new(0.2, 0.01, 100, 3);
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        (c, law, truth.dvtilde, init, sim)
    }

    #[test]
    fn identical_and_permuted_starts_give_zero() {
        let (c, law, dv, init, sim) = setup();
        let cfg = FilterConfig::new(50, 1);
        let s = FilterState::sample(&init, 50, 1).unwrap();
        let same = pathwise_uniqueness_gap(&c, &law, &dv, s.clone(), s.clone(), &sim, &cfg, None).unwrap();
        assert!(same.gap.iter().all(|&g| g == 0.0));
        let perm: Vec<usize> = (0..50).map(|i| (i * 7) % 50).collect();
        let permuted = pathwise_uniqueness_gap(&c, &law, &dv, s.clone(), s.permuted(&perm), &sim, &cfg, None).unwrap();
        assert!(permuted.gap.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn independent_starts_differ_and_labels_must_match() {
        let (c, law, dv, init, sim) = setup();
        let cfg = FilterConfig::new(50, 1);
        let s1 = FilterState::sample(&init, 50, 1).unwrap();
        let s2 = FilterState::sample(&init, 50, 2).unwrap();
        let gap = pathwise_uniqueness_gap(&c, &law, &dv, s1.clone(), s2, &sim, &cfg, None).unwrap();
        assert!(gap.terminal() > 0.0);
        let mut relabelled = s1.clone();
        relabelled.labels[0] = 99;
        assert!(matches!(
            pathwise_uniqueness_gap(&c, &law, &dv, s1, relabelled, &sim, &cfg, None),
            Err(Error::NoiseMismatch(_))
        ));
    }
}
