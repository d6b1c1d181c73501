//! Smooth test functions with analytic first and second derivatives.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

/// A scalar function on `R^n` with analytic gradient and Hessian.
///
/// Hessians are written row-major into an `n * n` buffer.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64], out: &mut [f64]);

    /// Value, gradient and Hessian in one call.
    fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        self.gradient(x, grad);
        self.hessian(x, hess);
        self.value(x)
    }

    /// The function vanishes outside the ball of this radius about the origin.
    fn support_radius(&self) -> Option<f64> {
        None
    }

    /// Sampled sup of `|φ|`, `|∂φ|` and `|∂²φ|` over the support (or over
    /// `[-8, 8]^n` when the support is unbounded).
    fn c2_norm(&self) -> f64 {
        let half = self.support_radius().unwrap_or(8.0);
        c2_norm_on_box(self, half, 0)
    }
}

pub type SharedTestFunction = Arc<dyn TestFunction>;

/// Sampled `C²` norm on `[-half, half]^n` over a regular lattice.
/// `per_axis = 0` picks a lattice of at most about 20 000 nodes.
pub fn c2_norm_on_box<T: TestFunction + ?Sized>(phi: &T, half: f64, per_axis: usize) -> f64 {
    let n = phi.dim();
    let per_axis = if per_axis == 0 {
        let mut k = 2usize;
        while (k + 1).pow(n as u32) <= 20_000 && k < 2001 {
            k += 1;
        }
        k
    } else {
        per_axis
    };
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    let mut best: f64 = 0.0;
    loop {
        for (xi, &k) in x.iter_mut().zip(&idx) {
            *xi = -half + 2.0 * half * k as f64 / (per_axis - 1) as f64;
        }
        phi.gradient(&x, &mut g);
        phi.hessian(&x, &mut h);
        best = best.max(phi.value(&x).abs());
        best = g.iter().chain(&h).fold(best, |m, v| m.max(v.abs()));
        let mut d = 0;
        loop {
            if d == n {
                return best;
            }
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

#[inline]
fn ipow(x: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, _| acc * x)
}

/// A multivariate polynomial `Σ c · Π x_i^{p_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        assert!(terms.iter().all(|(_, p)| p.len() == dim), "exponent vector length must equal the dimension");
        Self { dim, terms }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, vec![(c, vec![0; dim])])
    }

    /// `c0 + Σ a_i x_i`.
    pub fn affine(c0: f64, coeffs: &[f64]) -> Self {
        let dim = coeffs.len();
        let mut terms = vec![(c0, vec![0; dim])];
        for (i, &a) in coeffs.iter().enumerate() {
            let mut p = vec![0; dim];
            p[i] = 1;
            terms.push((a, p));
        }
        Self::new(dim, terms)
    }

    /// `x^T Q x / 2 + a·x + c0` with symmetric `q` (row-major).
    pub fn quadratic(q: &[f64], a: &[f64], c0: f64) -> Self {
        let dim = a.len();
        let mut poly = Self::affine(c0, a);
        for i in 0..dim {
            for j in i..dim {
                let mut p = vec![0; dim];
                p[i] += 1;
                p[j] += 1;
                let c = if i == j { 0.5 * q[i * dim + i] } else { q[i * dim + j] };
                poly.terms.push((c, p));
            }
        }
        poly
    }

    pub fn monomial(coeff: f64, powers: Vec<u32>) -> Self {
        Self::new(powers.len(), vec![(coeff, powers)])
    }
}

impl TestFunction for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, p)| c * x.iter().zip(p).map(|(&xi, &k)| ipow(xi, k)).product::<f64>())
            .sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (c, p) in &self.terms {
            for i in 0..self.dim {
                if p[i] == 0 {
                    continue;
                }
                let mut term = c * f64::from(p[i]);
                for (l, (&xl, &k)) in x.iter().zip(p).enumerate() {
                    term *= if l == i { ipow(xl, k - 1) } else { ipow(xl, k) };
                }
                out[i] += term;
            }
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        out.fill(0.0);
        for (c, p) in &self.terms {
            for i in 0..n {
                for j in 0..n {
                    let (pi, pj) = (p[i], p[j]);
                    let factor = if i == j { f64::from(pi) * f64::from(pi.saturating_sub(1)) } else { f64::from(pi) * f64::from(pj) };
                    if factor == 0.0 {
                        continue;
                    }
                    let lowered = |l: usize, k: u32| k - u32::from(l == i) - u32::from(l == j);
                    let monomial: f64 = x.iter().zip(p).enumerate().map(|(l, (&xl, &k))| ipow(xl, lowered(l, k))).product();
                    out[i * n + j] += c * factor * monomial;
                }
            }
        }
    }
}

/// Smooth cut-offs used to give polynomials compact support.
#[derive(Clone, Debug, PartialEq)]
pub enum Window {
    /// `exp(1 - 1/(1 - |x-c|²/r²))` inside the ball, zero outside; equals 1 at the center.
    Bump { center: Vec<f64>, radius: f64 },
    /// Identically 1 on `|x-c| ≤ inner`, zero for `|x-c| ≥ outer`, smooth in between.
    Plateau { center: Vec<f64>, inner: f64, outer: f64 },
}

/// `e^{-1/u}` for `u > 0`, with first and second derivatives.
#[inline]
fn smooth_edge(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = libm::exp(-1.0 / u);
    let u2 = u * u;
    (f, f / u2, f * (1.0 / (u2 * u2) - 2.0 / (u2 * u)))
}

/// Smooth step from 0 (u ≤ 0) to 1 (u ≥ 1), with two derivatives.
fn smooth_step(u: f64) -> (f64, f64, f64) {
    let (p, p1, p2) = smooth_edge(u);
    let (q, q1, q2) = smooth_edge(1.0 - u);
    let d = p + q;
    let num = p1 * q + p * q1;
    let num1 = p2 * q - p * q2;
    let d1 = p1 - q1;
    (p / d, num / (d * d), (num1 * d - 2.0 * num * d1) / (d * d * d))
}

impl Window {
    fn center(&self) -> &[f64] {
        match self {
            Self::Bump { center, .. } | Self::Plateau { center, .. } => center,
        }
    }

    fn outer_radius(&self) -> f64 {
        match self {
            Self::Bump { radius, .. } => *radius,
            Self::Plateau { outer, .. } => *outer,
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(self.center()).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Self::Bump { radius, .. } => {
                let s = r2 / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    libm::exp(1.0 - 1.0 / (1.0 - s))
                }
            }
            Self::Plateau { inner, outer, .. } => {
                let r = libm::sqrt(r2);
                if r <= *inner {
                    1.0
                } else if r >= *outer {
                    0.0
                } else {
                    1.0 - smooth_step((r - inner) / (outer - inner)).0
                }
            }
        }
    }

    /// Value, gradient and Hessian at `x`.
    fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = x.len();
        grad.fill(0.0);
        hess.fill(0.0);
        let c = self.center();
        let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
        match self {
            Self::Bump { radius, .. } => {
                let rr = radius * radius;
                let s = r2 / rr;
                if s >= 1.0 {
                    return 0.0;
                }
                let q = 1.0 / (1.0 - s);
                let b = libm::exp(1.0 - q);
                if b == 0.0 {
                    return 0.0;
                }
                let bs = -q * q * b;
                let bss = b * (q * q * q * q - 2.0 * q * q * q);
                for i in 0..n {
                    let si = 2.0 * (x[i] - c[i]) / rr;
                    grad[i] = bs * si;
                    for j in 0..n {
                        let sj = 2.0 * (x[j] - c[j]) / rr;
                        hess[i * n + j] = bss * si * sj + if i == j { bs * 2.0 / rr } else { 0.0 };
                    }
                }
                b
            }
            Self::Plateau { inner, outer, .. } => {
                let r = libm::sqrt(r2);
                if r <= *inner {
                    return 1.0;
                }
                if r >= *outer {
                    return 0.0;
                }
                let width = outer - inner;
                let (g, g1, g2) = smooth_step((r - inner) / width);
                let w1 = -g1 / width;
                let w2 = -g2 / (width * width);
                for i in 0..n {
                    let ei = (x[i] - c[i]) / r;
                    grad[i] = w1 * ei;
                    for j in 0..n {
                        let ej = (x[j] - c[j]) / r;
                        let delta = if i == j { 1.0 } else { 0.0 };
                        hess[i * n + j] = w2 * ei * ej + w1 / r * (delta - ei * ej);
                    }
                }
                1.0 - g
            }
        }
    }
}

/// A polynomial multiplied by a smooth window: a compactly supported `C^∞` function.
#[derive(Clone, Debug, PartialEq)]
pub struct Windowed {
    poly: Polynomial,
    window: Window,
}

impl Windowed {
    pub fn new(poly: Polynomial, window: Window) -> Self {
        assert_eq!(poly.dim, window.center().len(), "window center must match the polynomial dimension");
        Self { poly, window }
    }

    /// `x_axis` on a plateau of half-width `inner` centered at the origin.
    pub fn coordinate(dim: usize, axis: usize, inner: f64, outer: f64) -> Self {
        let mut a = vec![0.0; dim];
        a[axis] = 1.0;
        Self::new(
            Polynomial::affine(0.0, &a),
            Window::Plateau { center: vec![0.0; dim], inner, outer },
        )
    }

    /// The constant 1 on a plateau centered at the origin.
    pub fn unit(dim: usize, inner: f64, outer: f64) -> Self {
        Self::new(Polynomial::constant(dim, 1.0), Window::Plateau { center: vec![0.0; dim], inner, outer })
    }
}

impl TestFunction for Windowed {
    fn dim(&self) -> usize {
        self.poly.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let w = self.window.value(x);
        if w == 0.0 {
            0.0
        } else {
            w * self.poly.value(x)
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        let (mut wg, mut wh) = (vec![0.0; n], vec![0.0; n * n]);
        let w = self.window.eval(x, &mut wg, &mut wh);
        self.poly.gradient(x, out);
        let p = self.poly.value(x);
        for (o, dw) in out.iter_mut().zip(&wg) {
            *o = w * *o + p * dw;
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g, out);
    }

    fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = x.len();
        let (mut wg, mut wh) = (vec![0.0; n], vec![0.0; n * n]);
        let w = self.window.eval(x, &mut wg, &mut wh);
        if w == 0.0 && wg.iter().all(|v| *v == 0.0) && wh.iter().all(|v| *v == 0.0) {
            grad.fill(0.0);
            hess.fill(0.0);
            return 0.0;
        }
        self.poly.gradient(x, grad);
        self.poly.hessian(x, hess);
        let p = self.poly.value(x);
        for i in 0..n {
            for j in 0..n {
                hess[i * n + j] = w * hess[i * n + j] + grad[i] * wg[j] + wg[i] * grad[j] + p * wh[i * n + j];
            }
        }
        for (g, dw) in grad.iter_mut().zip(&wg) {
            *g = w * *g + p * dw;
        }
        w * p
    }

    fn support_radius(&self) -> Option<f64> {
        Some(crate::linalg::norm(self.window.center()) + self.window.outer_radius())
    }
}

/// `amplitude · exp(-|x-c|²/(2 variance))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub variance: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    /// Normalized Gaussian density with the given center and variance.
    pub fn density(center: Vec<f64>, variance: f64) -> Self {
        let n = center.len() as f64;
        let amplitude = libm::pow(2.0 * core::f64::consts::PI * variance, -n / 2.0);
        Self { center, variance, amplitude }
    }
}

impl TestFunction for GaussianBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * libm::exp(-r2 / (2.0 * self.variance))
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let v = self.value(x);
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o = -v * (xi - ci) / self.variance;
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; x.len()];
        self.eval(x, &mut g, out);
    }

    fn eval(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let n = x.len();
        let v = self.value(x);
        let s = self.variance;
        for i in 0..n {
            let di = x[i] - self.center[i];
            grad[i] = -v * di / s;
            for j in 0..n {
                let dj = x[j] - self.center[j];
                hess[i * n + j] = v * (di * dj / (s * s) - if i == j { 1.0 / s } else { 0.0 });
            }
        }
        v
    }
}

/// `Σ a_k φ_k`.
#[derive(Clone)]
pub struct LinearCombination {
    terms: Vec<(f64, SharedTestFunction)>,
}

impl LinearCombination {
    pub fn new(terms: Vec<(f64, SharedTestFunction)>) -> Self {
        assert!(!terms.is_empty(), "a linear combination needs at least one term");
        let n = terms[0].1.dim();
        assert!(terms.iter().all(|(_, f)| f.dim() == n), "terms must share a dimension");
        Self { terms }
    }
}

impl TestFunction for LinearCombination {
    fn dim(&self) -> usize {
        self.terms[0].1.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(a, f)| a * f.value(x)).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (a, f) in &self.terms {
            f.gradient(x, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += a * t);
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (a, f) in &self.terms {
            f.hessian(x, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += a * t);
        }
    }

    fn support_radius(&self) -> Option<f64> {
        self.terms
            .iter()
            .map(|(_, f)| f.support_radius())
            .try_fold(0.0f64, |m, r| r.map(|r| m.max(r)))
    }
}
