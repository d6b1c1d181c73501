use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// A finite weighted point cloud in `R^n`.
///
/// Weights need not sum to one, so the same type stands for both probability
/// measures and finite nonnegative measures. Points are stored row-major.
/// The mean and second moment are cached at construction because mean-field
/// coefficients query them once per particle per step.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    mass: f64,
    mean: Vec<f64>,
    second_moment: f64,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("measure dimension must be positive".into()));
        }
        if points.len() != weights.len() * dim {
            return Err(Error::DimensionMismatch { expected: weights.len() * dim, found: points.len() });
        }
        if let Some(index) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidWeight { index });
        }
        let mass = weights.iter().sum();
        Ok(Self::assemble(dim, points, weights, mass))
    }

    /// Equal weights `1/N` with mass exactly one.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(Error::InvalidConfig("uniform cloud needs a nonempty multiple of the dimension".into()));
        }
        let n = points.len() / dim;
        Ok(Self::assemble(dim, points, vec![1.0 / n as f64; n], 1.0))
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self::assemble(x.len(), x.to_vec(), vec![1.0], 1.0)
    }

    fn assemble(dim: usize, points: Vec<f64>, weights: Vec<f64>, mass: f64) -> Self {
        let mut mean = vec![0.0; dim];
        let mut second_moment = 0.0;
        if mass > 0.0 {
            for (p, w) in points.chunks_exact(dim).zip(&weights) {
                for (m, x) in mean.iter_mut().zip(p) {
                    *m += w * x;
                    second_moment += w * x * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            second_moment /= mass;
        }
        Self { dim, points, weights, mass, mean, second_moment }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Normalized mean; zero for a zero-mass measure.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Normalized second moment `∫|x|² dμ / mass`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// `⟨μ, f⟩` with the raw (unnormalized) weights.
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.atoms().map(|(x, w)| w * f(x)).sum()
    }

    pub fn as_probability(&self) -> Result<Self> {
        if !(self.mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        let weights = self.weights.iter().map(|w| w / self.mass).collect();
        Ok(Self {
            weights,
            mass: 1.0,
            ..self.clone()
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.dim, self.points.clone(), self.weights.iter().map(|w| w * factor).collect())
    }

    /// Image measure `μ ∘ T⁻¹`.
    pub fn push_forward<T: FnMut(&[f64], &mut [f64])>(&self, mut map: T) -> Self {
        let mut points = vec![0.0; self.points.len()];
        for (src, dst) in self.points.chunks_exact(self.dim).zip(points.chunks_exact_mut(self.dim)) {
            map(src, dst);
        }
        Self::assemble(self.dim, points, self.weights.clone(), self.mass)
    }

    /// Largest coordinate magnitude over the atoms.
    pub fn max_abs_coordinate(&self) -> f64 {
        self.points.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}
