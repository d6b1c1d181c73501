//! Cylindrical functionals of measures.
//!
//! A [`MeasureFunctional`] is `G(ν) = g(⟨ν,φ_1⟩, …, ⟨ν,φ_k⟩)`. A
//! [`CylindricalStateFunctional`] couples a state test function `φ(x)` with an
//! outer `g` of finitely many moments `⟨μ,ψ_j⟩`, which gives closed-form Lions
//! derivatives: `∂_μF(x,μ)(y) = Σ_j ∂_{z_j}F · ∇ψ_j(y)`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::measure::EmpiricalMeasure;
use super::testfn::SharedTestFunction;

/// A `C²` function of `k` real arguments with analytic derivatives.
pub trait MeasureOuter: Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
    fn hessian(&self, z: &[f64], out: &mut [f64]);
}

pub type SharedOuter = Arc<dyn MeasureOuter>;

/// Bounded smooth primitives and the linear/quadratic forms used in checks.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Outer {
    Constant { arity: usize, value: f64 },
    /// `c0 + a·z`.
    Linear { coeffs: Vec<f64>, offset: f64 },
    /// `scale · tanh(a·z + c0)`.
    Tanh { coeffs: Vec<f64>, offset: f64, scale: f64 },
    /// `s/(1+s)` with `s = (a·z + c0)²`: bounded by 1.
    SoftSquare { coeffs: Vec<f64>, offset: f64 },
    /// `z^T Q z / 2 + a·z` (unbounded; for algebraic checks).
    Quadratic { q: Vec<f64>, coeffs: Vec<f64> },
    /// `z_0 · z_1 · … · z_{k-1}`.
    Product { arity: usize },
}

impl Outer {
    fn affine(coeffs: &[f64], offset: f64, z: &[f64]) -> f64 {
        offset + coeffs.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl MeasureOuter for Outer {
    fn arity(&self) -> usize {
        match self {
            Self::Constant { arity, .. } | Self::Product { arity } => *arity,
            Self::Linear { coeffs, .. }
            | Self::Tanh { coeffs, .. }
            | Self::SoftSquare { coeffs, .. }
            | Self::Quadratic { coeffs, .. } => coeffs.len(),
        }
    }

    fn value(&self, z: &[f64]) -> f64 {
        match self {
            Self::Constant { value, .. } => *value,
            Self::Linear { coeffs, offset } => Self::affine(coeffs, *offset, z),
            Self::Tanh { coeffs, offset, scale } => scale * libm::tanh(Self::affine(coeffs, *offset, z)),
            Self::SoftSquare { coeffs, offset } => {
                let s = libm::pow(Self::affine(coeffs, *offset, z), 2.0);
                s / (1.0 + s)
            }
            Self::Quadratic { q, coeffs } => {
                let k = coeffs.len();
                let mut v = Self::affine(coeffs, 0.0, z);
                for i in 0..k {
                    for j in 0..k {
                        v += 0.5 * z[i] * q[i * k + j] * z[j];
                    }
                }
                v
            }
            Self::Product { .. } => z.iter().product(),
        }
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant { .. } => out.fill(0.0),
            Self::Linear { coeffs, .. } => out.copy_from_slice(coeffs),
            Self::Tanh { coeffs, offset, scale } => {
                let t = libm::tanh(Self::affine(coeffs, *offset, z));
                let d = scale * (1.0 - t * t);
                out.iter_mut().zip(coeffs).for_each(|(o, a)| *o = d * a);
            }
            Self::SoftSquare { coeffs, offset } => {
                let u = Self::affine(coeffs, *offset, z);
                let d = 2.0 * u / libm::pow(1.0 + u * u, 2.0);
                out.iter_mut().zip(coeffs).for_each(|(o, a)| *o = d * a);
            }
            Self::Quadratic { q, coeffs } => {
                let k = coeffs.len();
                for i in 0..k {
                    out[i] = coeffs[i] + (0..k).map(|j| 0.5 * (q[i * k + j] + q[j * k + i]) * z[j]).sum::<f64>();
                }
            }
            Self::Product { arity } => {
                for i in 0..*arity {
                    out[i] = (0..*arity).filter(|&j| j != i).map(|j| z[j]).product();
                }
            }
        }
    }

    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let k = self.arity();
        match self {
            Self::Constant { .. } | Self::Linear { .. } => out.fill(0.0),
            Self::Tanh { coeffs, offset, scale } => {
                let t = libm::tanh(Self::affine(coeffs, *offset, z));
                let d2 = -2.0 * scale * t * (1.0 - t * t);
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = d2 * coeffs[i] * coeffs[j];
                    }
                }
            }
            Self::SoftSquare { coeffs, offset } => {
                let u = Self::affine(coeffs, *offset, z);
                let p = 1.0 + u * u;
                let d2 = (2.0 - 6.0 * u * u) / (p * p * p);
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = d2 * coeffs[i] * coeffs[j];
                    }
                }
            }
            Self::Quadratic { q, .. } => {
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = 0.5 * (q[i * k + j] + q[j * k + i]);
                    }
                }
            }
            Self::Product { .. } => {
                for i in 0..k {
                    for j in 0..k {
                        out[i * k + j] = if i == j {
                            0.0
                        } else {
                            (0..k).filter(|&l| l != i && l != j).map(|l| z[l]).product()
                        };
                    }
                }
            }
        }
    }
}

/// `⟨μ, φ_j⟩` for each `j`, with raw weights.
pub fn moments(mu: &EmpiricalMeasure, phis: &[SharedTestFunction]) -> Vec<f64> {
    let mut z = vec![0.0; phis.len()];
    for (x, w) in mu.atoms() {
        for (zj, phi) in z.iter_mut().zip(phis) {
            *zj += w * phi.value(x);
        }
    }
    z
}

/// `G(ν) = g(⟨ν,φ_1⟩, …, ⟨ν,φ_k⟩)`.
#[derive(Clone)]
pub struct MeasureFunctional {
    pub outer: SharedOuter,
    pub phis: Vec<SharedTestFunction>,
}

impl MeasureFunctional {
    pub fn new(outer: SharedOuter, phis: Vec<SharedTestFunction>) -> Self {
        assert_eq!(outer.arity(), phis.len(), "outer arity must equal the number of test functions");
        Self { outer, phis }
    }

    /// `G(ν) = ⟨ν, φ⟩`.
    pub fn linear(phi: SharedTestFunction) -> Self {
        Self::new(Arc::new(Outer::Linear { coeffs: vec![1.0], offset: 0.0 }), vec![phi])
    }

    pub fn arity(&self) -> usize {
        self.phis.len()
    }

    pub fn value(&self, nu: &EmpiricalMeasure) -> f64 {
        self.outer.value(&moments(nu, &self.phis))
    }
}

/// How the state factor and the measure factor are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Coupling {
    /// `F = φ(x) · g(z)`.
    Product,
    /// `F = φ(x) + g(z)`.
    Sum,
}

/// `F(x, μ)` built from a state test function, an outer function of moments, and
/// the inner test functions that produce those moments.
#[derive(Clone)]
pub struct CylindricalStateFunctional {
    pub state: SharedTestFunction,
    pub coupling: Coupling,
    pub outer: SharedOuter,
    pub inner: Vec<SharedTestFunction>,
}

/// Everything the generators need about `F` at one point `(x, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDerivatives {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub hess_x: Vec<f64>,
    /// `∂_{z_j} F`, so that `∂_μF(x,μ)(y) = Σ_j dz[j] ∇ψ_j(y)`.
    pub dz: Vec<f64>,
}

impl CylindricalStateFunctional {
    pub fn new(
        state: SharedTestFunction,
        coupling: Coupling,
        outer: SharedOuter,
        inner: Vec<SharedTestFunction>,
    ) -> Self {
        assert_eq!(outer.arity(), inner.len(), "outer arity must equal the number of inner test functions");
        assert!(inner.iter().all(|p| p.dim() == state.dim()), "inner test functions must act on the state space");
        Self { state, coupling, outer, inner }
    }

    /// `F(x, μ) = φ(x)`.
    pub fn state_only(state: SharedTestFunction) -> Self {
        Self::new(state, Coupling::Product, Arc::new(Outer::Constant { arity: 0, value: 1.0 }), vec![])
    }

    /// `F(x, μ) = g(⟨μ,ψ⟩)`.
    pub fn measure_only(dim: usize, outer: SharedOuter, inner: Vec<SharedTestFunction>) -> Self {
        let one: SharedTestFunction = Arc::new(super::testfn::Polynomial::constant(dim, 1.0));
        Self::new(one, Coupling::Product, outer, inner)
    }

    pub fn dim(&self) -> usize {
        self.state.dim()
    }

    pub fn moments(&self, mu: &EmpiricalMeasure) -> Vec<f64> {
        moments(mu, &self.inner)
    }

    /// `F(x, μ)` given precomputed moments `z = ⟨μ,ψ⟩`.
    pub fn value_with(&self, x: &[f64], z: &[f64]) -> f64 {
        let (p, g) = (self.state.value(x), self.outer.value(z));
        match self.coupling {
            Coupling::Product => p * g,
            Coupling::Sum => p + g,
        }
    }

    pub fn value(&self, x: &[f64], mu: &EmpiricalMeasure) -> f64 {
        self.value_with(x, &self.moments(mu))
    }

    pub fn derivatives_with(&self, x: &[f64], z: &[f64]) -> StateDerivatives {
        let n = self.dim();
        let k = self.inner.len();
        let mut grad_x = vec![0.0; n];
        let mut hess_x = vec![0.0; n * n];
        let mut dz = vec![0.0; k];
        let p = self.state.eval(x, &mut grad_x, &mut hess_x);
        self.outer.gradient(z, &mut dz);
        let g = self.outer.value(z);
        let value = match self.coupling {
            Coupling::Product => {
                grad_x.iter_mut().chain(hess_x.iter_mut()).for_each(|v| *v *= g);
                dz.iter_mut().for_each(|v| *v *= p);
                p * g
            }
            Coupling::Sum => p + g,
        };
        StateDerivatives { value, grad_x, hess_x, dz }
    }

    /// The Lions derivative `∂_μF(x,μ)(y) ∈ R^n`.
    pub fn l_derivative(&self, x: &[f64], mu: &EmpiricalMeasure, y: &[f64]) -> Vec<f64> {
        let d = self.derivatives_with(x, &self.moments(mu));
        let mut out = vec![0.0; self.dim()];
        let mut g = vec![0.0; self.dim()];
        for (c, psi) in d.dz.iter().zip(&self.inner) {
            psi.gradient(y, &mut g);
            out.iter_mut().zip(&g).for_each(|(o, gi)| *o += c * gi);
        }
        out
    }

    /// `∂_y ∂_μF(x,μ)(y)` as a row-major `n × n` matrix.
    pub fn l_derivative_jacobian(&self, x: &[f64], mu: &EmpiricalMeasure, y: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let d = self.derivatives_with(x, &self.moments(mu));
        let mut out = vec![0.0; n * n];
        let mut h = vec![0.0; n * n];
        for (c, psi) in d.dz.iter().zip(&self.inner) {
            psi.hessian(y, &mut h);
            out.iter_mut().zip(&h).for_each(|(o, hi)| *o += c * hi);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testfn::{GaussianBump, Polynomial, Window, Windowed};

    fn outers() -> Vec<Outer> {
        vec![
            Outer::Tanh { coeffs: vec![0.7, -0.4], offset: 0.1, scale: 1.3 },
            Outer::SoftSquare { coeffs: vec![1.1, 0.5], offset: -0.2 },
            Outer::Quadratic { q: vec![1.0, 0.4, 0.2, -0.5], coeffs: vec![0.3, 0.1] },
            Outer::Product { arity: 2 },
            Outer::Linear { coeffs: vec![2.0, -1.0], offset: 0.5 },
        ]
    }

    #[test]
    fn outer_derivatives_match_finite_differences() {
        let z = [0.35, -0.6];
        let h = 1e-5;
        for g in outers() {
            let mut grad = [0.0; 2];
            let mut hess = [0.0; 4];
            g.gradient(&z, &mut grad);
            g.hessian(&z, &mut hess);
            for i in 0..2 {
                let mut zp = z;
                let mut zm = z;
                zp[i] += h;
                zm[i] -= h;
                let fd = (g.value(&zp) - g.value(&zm)) / (2.0 * h);
                assert!((fd - grad[i]).abs() < 1e-8, "{g:?}");
                let (mut gp, mut gm) = ([0.0; 2], [0.0; 2]);
                g.gradient(&zp, &mut gp);
                g.gradient(&zm, &mut gm);
                for j in 0..2 {
                    assert!(((gp[j] - gm[j]) / (2.0 * h) - hess[j * 2 + i]).abs() < 1e-7, "{g:?}");
                }
            }
        }
    }

    fn sample_functional() -> CylindricalStateFunctional {
        let psi1: SharedTestFunction = Arc::new(Windowed::coordinate(1, 0, 3.0, 5.0));
        let psi2: SharedTestFunction = Arc::new(GaussianBump { center: vec![0.2], variance: 0.5, amplitude: 1.0 });
        let state: SharedTestFunction = Arc::new(Windowed::new(
            Polynomial::affine(0.5, &[1.0]),
            Window::Bump { center: vec![0.0], radius: 3.0 },
        ));
        CylindricalStateFunctional::new(
            state,
            Coupling::Product,
            Arc::new(Outer::Tanh { coeffs: vec![0.8, 1.2], offset: 0.1, scale: 1.0 }),
            vec![psi1, psi2],
        )
    }

    #[test]
    fn l_derivative_passes_push_forward_taylor_test() {
        let f = sample_functional();
        let mu = EmpiricalMeasure::new(1, vec![-0.7, 0.1, 0.4, 1.3], vec![0.1, 0.4, 0.3, 0.2]).unwrap();
        let x = [0.3];
        let direction = |y: f64| libm::sin(y) + 0.5;
        let base = f.value(&x, &mu);
        let linear: f64 = mu.integrate(|y| f.l_derivative(&x, &mu, y)[0] * direction(y[0]));
        let mut ratios = Vec::new();
        for k in 0..6 {
            let eps = 0.1 / f64::from(1 << k);
            let pushed = mu.push_forward(|y, out| out[0] = y[0] + eps * direction(y[0]));
            let remainder = (f.value(&x, &pushed) - base - eps * linear).abs();
            ratios.push(remainder / eps);
        }
        // o(ε): the ratio keeps shrinking (here at first order in ε).
        for w in ratios.windows(2) {
            assert!(w[1] < 0.6 * w[0], "{ratios:?}");
        }
    }

    #[test]
    fn l_derivative_jacobian_matches_finite_differences() {
        let f = sample_functional();
        let mu = EmpiricalMeasure::new(1, vec![-0.2, 0.9], vec![0.5, 0.5]).unwrap();
        let x = [0.1];
        let y = 0.4;
        let h = 1e-5;
        let fd = (f.l_derivative(&x, &mu, &[y + h])[0] - f.l_derivative(&x, &mu, &[y - h])[0]) / (2.0 * h);
        assert!((fd - f.l_derivative_jacobian(&x, &mu, &[y])[0]).abs() < 1e-7);
    }

    #[test]
    fn sum_coupling_separates() {
        let state: SharedTestFunction = Arc::new(Polynomial::monomial(1.0, vec![2]));
        let inner: SharedTestFunction = Arc::new(Polynomial::affine(0.0, &[1.0]));
        let f = CylindricalStateFunctional::new(
            state,
            Coupling::Sum,
            Arc::new(Outer::Linear { coeffs: vec![3.0], offset: 0.0 }),
            vec![inner],
        );
        let mu = EmpiricalMeasure::dirac(&[2.0]);
        assert_eq!(f.value(&[1.5], &mu), 2.25 + 6.0);
        let d = f.derivatives_with(&[1.5], &[2.0]);
        assert_eq!(d.grad_x, vec![3.0]);
        assert_eq!(d.dz, vec![3.0]);
    }
}
