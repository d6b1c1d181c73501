//! The three generators: `𝓛` on test functions, `𝕃` on state functionals and
//! `𝐋` on measure functionals.

use alloc::vec;
use alloc::vec::Vec;

use super::coefficients::{CoefficientSet, Dims, Evaluation};
use super::functional::{CylindricalStateFunctional, MeasureFunctional};
use super::measure::EmpiricalMeasure;
use super::testfn::{SharedTestFunction, TestFunction};
use crate::error::{Error, Result};
use crate::par;

/// `∇φ·b1 + ½ ∇²φ : (σ0σ0ᵀ + σ1σ1ᵀ)` from precomputed coefficient values.
pub fn lcal_from_values(dims: Dims, e: &Evaluation, grad: &[f64], hess: &[f64]) -> f64 {
    let Dims { n, d, m } = dims;
    let mut out: f64 = grad.iter().zip(&e.b1).map(|(g, b)| g * b).sum();
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            let hij = hess[i * n + j];
            if hij == 0.0 {
                continue;
            }
            let mut a = 0.0;
            for k in 0..d {
                a += e.sigma0[i * d + k] * e.sigma0[j * d + k];
            }
            for k in 0..m {
                a += e.sigma1[i * m + k] * e.sigma1[j * m + k];
            }
            second += hij * a;
        }
    }
    out += 0.5 * second;
    out
}

/// `(𝓛_t φ)(x, μ)`.
pub fn generator_lcal(c: &CoefficientSet, t: f64, phi: &dyn TestFunction, mu: &EmpiricalMeasure, x: &[f64]) -> Result<f64> {
    let dims = c.dims();
    check_dim(dims.n, phi.dim())?;
    check_dim(dims.n, x.len())?;
    let inv = c.sigma2_inverse(t)?;
    let mut e = Evaluation::new(dims);
    c.evaluate(t, x, mu, &inv, &mut e);
    let mut g = vec![0.0; dims.n];
    let mut h = vec![0.0; dims.n * dims.n];
    phi.eval(x, &mut g, &mut h);
    Ok(lcal_from_values(dims, &e, &g, &h))
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// `⟨μ, 𝓛_t ψ_j(·, μ)⟩` for each inner test function: the measure part of `𝕃_t`
/// needs only these, and they do not depend on the state argument.
pub fn law_drift_moments(c: &CoefficientSet, t: f64, inner: &[SharedTestFunction], mu: &EmpiricalMeasure) -> Result<Vec<f64>> {
    Ok(weak_terms(c, t, inner, mu, mu)?.drift)
}

/// `(𝕃_t F)(x, μ)`.
pub fn generator_lbb(c: &CoefficientSet, t: f64, f: &CylindricalStateFunctional, mu: &EmpiricalMeasure, x: &[f64]) -> Result<f64> {
    let z = f.moments(mu);
    let law = law_drift_moments(c, t, &f.inner, mu)?;
    generator_lbb_with(c, t, f, mu, x, &z, &law)
}

/// `(𝕃_t F)(x, μ)` given `z = ⟨μ,ψ⟩` and `law = ⟨μ, 𝓛ψ⟩`.
pub fn generator_lbb_with(
    c: &CoefficientSet,
    t: f64,
    f: &CylindricalStateFunctional,
    mu: &EmpiricalMeasure,
    x: &[f64],
    z: &[f64],
    law: &[f64],
) -> Result<f64> {
    let dims = c.dims();
    check_dim(dims.n, f.dim())?;
    let inv = c.sigma2_inverse(t)?;
    let mut e = Evaluation::new(dims);
    c.evaluate(t, x, mu, &inv, &mut e);
    let d = f.derivatives_with(x, z);
    let state_part = lcal_from_values(dims, &e, &d.grad_x, &d.hess_x);
    let measure_part: f64 = d.dz.iter().zip(law).map(|(a, b)| a * b).sum();
    Ok(state_part + measure_part)
}

/// Integrals of a weighted cloud `ν` against test functions `φ_u`, with the
/// coefficients frozen at the law `μ`:
/// `values[u] = ⟨ν, φ_u⟩`, `drift[u] = ⟨ν, 𝓛φ_u⟩`,
/// `loading[u*m + l] = ⟨ν, φ_u h^l + ∂_iφ_u σ1^{il}⟩`, and
/// `particle_noise[u*k + v] = Σ_i w_i² (∇φ_u σ0)·(∇φ_v σ0)(x_i)`, the rate at
/// which independent per-atom noise adds covariation when `ν` is a particle cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakTerms {
    pub values: Vec<f64>,
    pub drift: Vec<f64>,
    pub loading: Vec<f64>,
    pub particle_noise: Vec<f64>,
}

impl WeakTerms {
    /// The terms of `phis[start..start + len]` out of a larger batch with `m` observation channels.
    pub fn slice(&self, start: usize, len: usize, m: usize) -> WeakTerms {
        let k = self.values.len();
        let range = start..start + len;
        WeakTerms {
            values: self.values[range.clone()].to_vec(),
            drift: self.drift[range.clone()].to_vec(),
            loading: self.loading[start * m..(start + len) * m].to_vec(),
            particle_noise: range.clone().flat_map(|u| self.particle_noise[u * k + start..u * k + start + len].iter().copied()).collect(),
        }
    }
}

const CHUNK: usize = 256;

pub fn weak_terms(
    c: &CoefficientSet,
    t: f64,
    phis: &[SharedTestFunction],
    nu: &EmpiricalMeasure,
    law: &EmpiricalMeasure,
) -> Result<WeakTerms> {
    let dims = c.dims();
    check_dim(dims.n, nu.dim())?;
    for p in phis {
        check_dim(dims.n, p.dim())?;
    }
    let inv = c.sigma2_inverse(t)?;
    let Dims { n, d, m } = dims;
    let k = phis.len();
    let width = k * (2 + m) + k * k;
    let chunks = nu.len().div_ceil(CHUNK);
    // Fixed-size chunks summed in order keep the result independent of threading.
    let partial = par::map_indexed(
        chunks,
        || (Evaluation::new(dims), vec![0.0; n], vec![0.0; n * n], vec![0.0; k * d]),
        |(e, g, h, gs0), chunk| {
            let mut acc = vec![0.0; width];
            let end = ((chunk + 1) * CHUNK).min(nu.len());
            for i in chunk * CHUNK..end {
                let w = nu.weights()[i];
                if w == 0.0 {
                    continue;
                }
                let x = nu.point(i);
                c.evaluate(t, x, law, &inv, e);
                for (u, phi) in phis.iter().enumerate() {
                    let v = phi.eval(x, g, h);
                    acc[u] += w * v;
                    acc[k + u] += w * lcal_from_values(dims, e, g, h);
                    for l in 0..m {
                        let mut a = v * e.h[l];
                        for r in 0..n {
                            a += g[r] * e.sigma1[r * m + l];
                        }
                        acc[2 * k + u * m + l] += w * a;
                    }
                    for col in 0..d {
                        gs0[u * d + col] = (0..n).map(|r| g[r] * e.sigma0[r * d + col]).sum();
                    }
                }
                let base = k * (2 + m);
                for u in 0..k {
                    for v in 0..k {
                        let dot: f64 = (0..d).map(|col| gs0[u * d + col] * gs0[v * d + col]).sum();
                        acc[base + u * k + v] += w * w * dot;
                    }
                }
            }
            acc
        },
    );
    let mut total = vec![0.0; width];
    for p in partial {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let base = k * (2 + m);
    Ok(WeakTerms {
        values: total[..k].to_vec(),
        drift: total[k..2 * k].to_vec(),
        loading: total[2 * k..base].to_vec(),
        particle_noise: total[base..].to_vec(),
    })
}

/// `𝐋_t G(ν)` assembled from the weak terms of `G`'s test functions.
pub fn lbf_from_terms(g: &MeasureFunctional, terms: &WeakTerms, m: usize) -> f64 {
    let k = g.arity();
    let mut grad = vec![0.0; k];
    let mut hess = vec![0.0; k * k];
    g.outer.gradient(&terms.values, &mut grad);
    g.outer.hessian(&terms.values, &mut hess);
    let mut out: f64 = grad.iter().zip(&terms.drift).map(|(a, b)| a * b).sum();
    for u in 0..k {
        for v in 0..k {
            let huv = hess[u * k + v];
            if huv == 0.0 {
                continue;
            }
            let cross: f64 = (0..m).map(|l| terms.loading[u * m + l] * terms.loading[v * m + l]).sum();
            out += 0.5 * huv * cross;
        }
    }
    out
}

/// `𝐋_t G(ν)` with `law` standing in for the law of the signal.
pub fn generator_lbf(
    c: &CoefficientSet,
    t: f64,
    g: &MeasureFunctional,
    nu: &EmpiricalMeasure,
    law: &EmpiricalMeasure,
) -> Result<f64> {
    let terms = weak_terms(c, t, &g.phis, nu, law)?;
    Ok(lbf_from_terms(g, &terms, c.dims().m))
}
