//! Weighted particle clouds.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::measure::EmpiricalMeasure;
use crate::model::testfn::TestFunction;
use crate::rng::{self, Domain};
use crate::sde::InitialLaw;

/// A particle cloud `μ̂ = (1/N) Σ exp(lw_i) δ_{X_i}`.
///
/// Labels identify each particle's noise stream, so permuting the cloud
/// together with its labels permutes the driving noises with it.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    dim: usize,
    pub particles: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub labels: Vec<u64>,
    pub time: f64,
}

impl FilterState {
    pub fn new(dim: usize, particles: Vec<f64>, log_weights: Vec<f64>, labels: Vec<u64>, time: f64) -> Result<Self> {
        let n = log_weights.len();
        if dim == 0 || particles.len() != n * dim {
            return Err(Error::DimensionMismatch { expected: n * dim, found: particles.len() });
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: labels.len() });
        }
        if let Some(index) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::InvalidWeight { index });
        }
        Ok(Self { dim, particles, log_weights, labels, time })
    }

    /// Unit-weight particles at the given positions, labelled `0..N`.
    pub fn from_points(dim: usize, particles: Vec<f64>) -> Result<Self> {
        let n = particles.len() / dim.max(1);
        Self::new(dim, particles, vec![0.0; n], (0..n as u64).collect(), 0.0)
    }

    /// `N` unit-weight particles drawn from `init`, particle `i` from stream `i`.
    pub fn sample(init: &InitialLaw, n: usize, seed: u64) -> Result<Self> {
        let dim = init.dim();
        let mut particles = vec![0.0; n * dim];
        for (i, x) in particles.chunks_exact_mut(dim).enumerate() {
            let mut rng = rng::stream(seed, Domain::FilterInit, i as u64);
            init.sample(&mut rng, x);
        }
        Self::from_points(dim, particles)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    fn max_log_weight(&self) -> f64 {
        self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `⟨μ̂, 1⟩`, summed with the largest log-weight factored out.
    pub fn mass(&self) -> f64 {
        let top = self.max_log_weight();
        if top == f64::NEG_INFINITY {
            return 0.0;
        }
        let s: f64 = self.log_weights.iter().map(|w| libm::exp(w - top)).sum();
        libm::exp(top) * s / self.len() as f64
    }

    /// Weights normalized to sum to one.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        let top = self.max_log_weight();
        if top == f64::NEG_INFINITY {
            return Err(Error::ZeroMass);
        }
        let mut w: Vec<f64> = self.log_weights.iter().map(|l| libm::exp(l - top)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        Ok(w)
    }

    /// The unnormalized cloud as a measure with weights `exp(lw_i)/N`.
    pub fn measure(&self) -> Result<EmpiricalMeasure> {
        let top = self.max_log_weight();
        let scale = libm::exp(top) / self.len() as f64;
        let w = self.log_weights.iter().map(|l| libm::exp(l - top) * scale).collect();
        EmpiricalMeasure::new(self.dim, self.particles.clone(), w)
    }

    /// The normalized cloud `Λ̂ = μ̂ / ⟨μ̂, 1⟩`.
    pub fn normalized(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::new(self.dim, self.particles.clone(), self.normalized_weights()?)
    }

    /// `⟨μ̂, φ⟩`.
    pub fn integrate(&self, phi: &dyn TestFunction) -> f64 {
        let top = self.max_log_weight();
        if top == f64::NEG_INFINITY {
            return 0.0;
        }
        let s: f64 = (0..self.len()).map(|i| libm::exp(self.log_weights[i] - top) * phi.value(self.particle(i))).sum();
        libm::exp(top) * s / self.len() as f64
    }

    /// `⟨μ̂, φ⟩ / ⟨μ̂, 1⟩`.
    pub fn normalize(&self, phi: &dyn TestFunction) -> Result<f64> {
        let w = self.normalized_weights()?;
        Ok(w.iter().enumerate().map(|(i, wi)| wi * phi.value(self.particle(i))).sum())
    }

    /// Mean of the normalized cloud.
    pub fn normalized_mean(&self) -> Result<Vec<f64>> {
        let w = self.normalized_weights()?;
        let mut mean = vec![0.0; self.dim];
        for (i, wi) in w.iter().enumerate() {
            mean.iter_mut().zip(self.particle(i)).for_each(|(m, x)| *m += wi * x);
        }
        Ok(mean)
    }

    /// `(Σw)² / Σw²` for the normalized weights.
    pub fn effective_sample_size(&self) -> f64 {
        match self.normalized_weights() {
            Ok(w) => 1.0 / w.iter().map(|x| x * x).sum::<f64>(),
            Err(_) => 0.0,
        }
    }

    /// Indices ordered by label.
    pub fn label_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by_key(|&i| self.labels[i]);
        idx
    }

    /// Applies a permutation: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut particles = Vec::with_capacity(self.particles.len());
        for &p in perm {
            particles.extend_from_slice(self.particle(p));
        }
        Self {
            dim: self.dim,
            particles,
            log_weights: perm.iter().map(|&p| self.log_weights[p]).collect(),
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            time: self.time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testfn::Polynomial;

    #[test]
    fn mass_is_exact_for_zero_log_weights() {
        let s = FilterState::from_points(1, (0..7).map(f64::from).collect()).unwrap();
        assert_eq!(s.mass(), 1.0);
        assert!((s.measure().unwrap().mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mass_survives_extreme_log_weights() {
        let s = FilterState::new(1, vec![0.0, 1.0], vec![-700.0, -701.0], vec![0, 1], 0.0).unwrap();
        let expected = libm::exp(-700.0) * (1.0 + libm::exp(-1.0)) / 2.0;
        assert!(s.mass() > 0.0);
        assert!(((s.mass() - expected) / expected).abs() < 1e-12);
        assert!((s.normalized_weights().unwrap()[0] - 1.0 / (1.0 + libm::exp(-1.0))).abs() < 1e-14);
    }

    #[test]
    fn normalization_is_ratio_of_integrals() {
        let s = FilterState::new(1, vec![1.0, 3.0], vec![0.0, libm::log(3.0)], vec![0, 1], 0.0).unwrap();
        let x = Polynomial::affine(0.0, &[1.0]);
        assert!((s.integrate(&x) - (1.0 + 9.0) / 2.0).abs() < 1e-12);
        assert!((s.normalize(&x).unwrap() - 2.5).abs() < 1e-12);
        assert!((s.effective_sample_size() - 1.0 / (1.0 / 16.0 + 9.0 / 16.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid_states_are_rejected() {
        assert!(FilterState::new(1, vec![0.0], vec![f64::NAN], vec![0], 0.0).is_err());
        assert!(FilterState::new(2, vec![0.0], vec![0.0], vec![0], 0.0).is_err());
        let dead = FilterState::new(1, vec![0.0], vec![f64::NEG_INFINITY], vec![0], 0.0).unwrap();
        assert_eq!(dead.normalized_weights(), Err(Error::ZeroMass));
    }

    #[test]
    fn sampling_is_deterministic() {
        let init = InitialLaw::Gaussian { mean: vec![0.0, 1.0], std: vec![1.0, 2.0] };
        let a = FilterState::sample(&init, 5, 3).unwrap();
        assert_eq!(a, FilterState::sample(&init, 5, 3).unwrap());
        let b = FilterState::sample(&init, 8, 3).unwrap();
        assert_eq!(&b.particles[..10], &a.particles[..]);
    }
}
