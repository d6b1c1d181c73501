//! Kalman–Bucy filter for linear-Gaussian coefficients with correlated noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::coefficients::{CoefficientSet, Dims, HypothesisConstants};
use crate::sde::InitialLaw;

/// `dX = A X dt + σ0 dW + σ1 dV`, `dY = C X dt + σ2 dV`, `X_0 ~ N(mean0, diag(std0²))`.
/// Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearSpec {
    pub dims: Dims,
    pub a: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub c: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub mean0: Vec<f64>,
    pub std0: Vec<f64>,
}

/// Conditional mean and covariance at one grid time.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl LinearSpec {
    /// Scalar model with the given coefficients.
    pub fn scalar(a: f64, sigma0: f64, sigma1: f64, c: f64, sigma2: f64, mean0: f64, std0: f64) -> Self {
        Self {
            dims: Dims { n: 1, d: 1, m: 1 },
            a: vec![a],
            sigma0: vec![sigma0],
            sigma1: vec![sigma1],
            c: vec![c],
            sigma2: vec![sigma2],
            mean0: vec![mean0],
            std0: vec![std0],
        }
    }

    fn validate(&self) -> Result<()> {
        let Dims { n, d, m } = self.dims;
        let sizes = [
            (self.a.len(), n * n),
            (self.sigma0.len(), n * d),
            (self.sigma1.len(), n * m),
            (self.c.len(), m * n),
            (self.sigma2.len(), m * m),
            (self.mean0.len(), n),
            (self.std0.len(), n),
        ];
        match sizes.iter().find(|(found, expected)| found != expected) {
            Some(&(found, expected)) => Err(Error::DimensionMismatch { expected, found }),
            None => Ok(()),
        }
    }

    pub fn initial_law(&self) -> InitialLaw {
        InitialLaw::Gaussian { mean: self.mean0.clone(), std: self.std0.clone() }
    }

    pub fn coefficients(&self, name: &str) -> Result<CoefficientSet> {
        self.validate()?;
        let Dims { n, d, m } = self.dims;
        let (a, s0, s1, c, s2) = (self.a.clone(), self.sigma0.clone(), self.sigma1.clone(), self.c.clone(), self.sigma2.clone());
        let sq = |a: &[f64]| a.iter().map(|v| v * v).sum::<f64>();
        let noise = sq(&self.sigma0) + sq(&self.sigma1);
        let constants = HypothesisConstants {
            lipschitz: Some(linalg::frobenius(&self.a)),
            growth: Some(sq(&self.a).max(noise)),
            observation_lipschitz: Some(linalg::frobenius(&self.c)),
            ..HypothesisConstants::default()
        };
        CoefficientSet::builder(name, self.dims)
            .drift(move |_, x, _, out| {
                out.fill(0.0);
                linalg::gemv_acc(out, &a, n, x, 1.0);
            })
            .signal_diffusion(move |_, _, _, out| out.copy_from_slice(&s0[..n * d]))
            .correlated_diffusion(move |_, _, _, out| out.copy_from_slice(&s1[..n * m]))
            .observation_drift(move |_, x, _, out| {
                out.fill(0.0);
                linalg::gemv_acc(out, &c, n, x, 1.0);
            })
            .observation_diffusion(move |_, out| out.copy_from_slice(&s2))
            .constants(constants)
            .build()
    }
}

/// `dP/dt = AP + PAᵀ + σ0σ0ᵀ + σ1σ1ᵀ - K R Kᵀ` with `K = (PCᵀ + σ1σ2ᵀ) R⁻¹`, `R = σ2σ2ᵀ`.
struct Riccati {
    n: usize,
    m: usize,
    a: Vec<f64>,
    q: Vec<f64>,
    c: Vec<f64>,
    cross: Vec<f64>,
    r: Vec<f64>,
    r_inv: Vec<f64>,
}

impl Riccati {
    fn new(spec: &LinearSpec) -> Result<Self> {
        let Dims { n, d, m } = spec.dims;
        let r = linalg::matmul_bt(&spec.sigma2, &spec.sigma2, m, m, m);
        let (r_inv, _) = linalg::inverse_with_condition(&r, m).ok_or(Error::SingularMatrix { t: 0.0 })?;
        let mut q = linalg::matmul_bt(&spec.sigma0, &spec.sigma0, n, d, n);
        q.iter_mut().zip(linalg::matmul_bt(&spec.sigma1, &spec.sigma1, n, m, n)).for_each(|(a, b)| *a += b);
        Ok(Self { n, m, a: spec.a.clone(), q, c: spec.c.clone(), cross: linalg::matmul_bt(&spec.sigma1, &spec.sigma2, n, m, m), r, r_inv })
    }

    fn gain(&self, p: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut pct = linalg::matmul_bt(p, &self.c, n, n, m);
        pct.iter_mut().zip(&self.cross).for_each(|(a, b)| *a += b);
        linalg::matmul(&pct, &self.r_inv, n, m, m)
    }

    fn rhs(&self, p: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let ap = linalg::matmul(&self.a, p, n, n, n);
        let k = self.gain(p);
        let kr = linalg::matmul(&k, &self.r, n, m, m);
        let krk = linalg::matmul_bt(&kr, &k, n, m, n);
        (0..n * n).map(|ij| ap[ij] + ap[(ij % n) * n + ij / n] + self.q[ij] - krk[ij]).collect()
    }

    fn rk4(&self, p: &[f64], dt: f64) -> Vec<f64> {
        let axpy = |x: &[f64], y: &[f64], s: f64| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + s * b).collect() };
        let k1 = self.rhs(p);
        let k2 = self.rhs(&axpy(p, &k1, dt / 2.0));
        let k3 = self.rhs(&axpy(p, &k2, dt / 2.0));
        let k4 = self.rhs(&axpy(p, &k3, dt));
        let mut out: Vec<f64> = (0..p.len()).map(|i| p[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
        let n = self.n;
        for i in 0..n {
            for j in 0..i {
                let s = 0.5 * (out[i * n + j] + out[j * n + i]);
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

/// Runs the filter along an observation path `y` sampled on the grid
/// (`(K+1) × m`, row per time). The mean uses the left-point gain; the
/// covariance is integrated with RK4.
pub fn kalman_bucy(spec: &LinearSpec, y: &[f64], dt: f64) -> Result<Vec<KalmanState>> {
    spec.validate()?;
    let Dims { n, m, .. } = spec.dims;
    if y.len() % m != 0 || y.len() < m {
        return Err(Error::DimensionMismatch { expected: m, found: y.len() % m });
    }
    let steps = y.len() / m - 1;
    let ric = Riccati::new(spec)?;
    let mut mean = spec.mean0.clone();
    let mut cov = vec![0.0; n * n];
    for i in 0..n {
        cov[i * n + i] = spec.std0[i] * spec.std0[i];
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(KalmanState { mean: mean.clone(), cov: cov.clone() });
    for k in 0..steps {
        let gain = ric.gain(&cov);
        let mut innovation: Vec<f64> = (0..m).map(|j| y[(k + 1) * m + j] - y[k * m + j]).collect();
        linalg::gemv_acc(&mut innovation, &spec.c, n, &mean, -dt);
        let mut next = mean.clone();
        linalg::gemv_acc(&mut next, &spec.a, n, &mean, dt);
        linalg::gemv_acc(&mut next, &gain, m, &innovation, 1.0);
        mean = next;
        cov = ric.rk4(&cov, dt);
        let min_eig = linalg::min_symmetric_eigenvalue(&cov, n);
        if min_eig < -1e-10 * (1.0 + linalg::frobenius(&cov)) {
            return Err(Error::NotPositiveSemiDefinite { step: k + 1, min_eigenvalue: min_eig });
        }
        out.push(KalmanState { mean: mean.clone(), cov: cov.clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_covariance_reaches_the_algebraic_riccati_root() {
        // 0 = 2aP + q + s² - (P c + s r)² / r², solved for P > 0.
        for (a, q, s, c, r) in [(-1.0, 1.0, 0.0, 1.0, 1.0), (-1.0, 1.0, 0.5, 1.0, 1.0), (0.3, 0.5, 0.2, 2.0, 0.7)] {
            let spec = LinearSpec::scalar(a, q, s, c, r, 0.0, 2.0);
            let y = vec![0.0; 20_001];
            let path = kalman_bucy(&spec, &y, 1e-3).unwrap();
            let p = path.last().unwrap().cov[0];
            let (qq, rr) = (q * q, r * r);
            // c²P² + 2(s r c - a r²)P + s²r² - (qq + s²) r² = 0
            let (qa, qb, qc) = (c * c, 2.0 * (s * r * c - a * rr), s * s * rr - (qq + s * s) * rr);
            let root = (-qb + libm::sqrt(qb * qb - 4.0 * qa * qc)) / (2.0 * qa);
            assert!((p - root).abs() < 1e-8, "{p} vs {root}");
        }
    }

    #[test]
    fn mean_matches_a_hand_step() {
        let spec = LinearSpec::scalar(-1.0, 1.0, 0.5, 2.0, 1.0, 0.3, 0.5);
        let path = kalman_bucy(&spec, &[0.0, 0.1], 0.01).unwrap();
        let p0 = 0.25;
        let gain = p0 * 2.0 + 0.5;
        let expected = 0.3 - 0.3 * 0.01 + gain * (0.1 - 2.0 * 0.3 * 0.01);
        assert!((path[1].mean[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_covariance_stays_symmetric_and_positive() {
        let spec = LinearSpec {
            dims: Dims { n: 2, d: 2, m: 1 },
            a: vec![-1.0, 0.5, 0.0, -0.3],
            sigma0: vec![1.0, 0.0, 0.2, 0.5],
            sigma1: vec![0.3, 0.1],
            c: vec![1.0, -1.0],
            sigma2: vec![0.8],
            mean0: vec![0.0, 0.0],
            std0: vec![1.0, 1.0],
        };
        let path = kalman_bucy(&spec, &vec![0.0; 1001], 1e-3).unwrap();
        let p = &path.last().unwrap().cov;
        assert_eq!(p[1], p[2]);
        assert!(p[0] > 0.0 && p[0] * p[3] - p[1] * p[2] > 0.0);
        assert!(spec.coefficients("two").is_ok());
    }

    #[test]
    fn malformed_specs_are_rejected() {
        let mut spec = LinearSpec::scalar(-1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0);
        spec.a.push(1.0);
        assert!(kalman_bucy(&spec, &[0.0, 0.0], 0.1).is_err());
        let zero = LinearSpec::scalar(-1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0);
        assert!(kalman_bucy(&zero, &[0.0, 0.0], 0.1).is_err());
    }
}
