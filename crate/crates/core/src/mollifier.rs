//! Gaussian smoothing of measures onto a grid, and the energy diagnostics
//! built on it.
//!
//! The kernel is `k_ε(x) = (2πε)^{-n/2} exp(-|x|²/2ε)`. Grid functions live on
//! the nodes `j·δx`, `j ∈ [-J, J]^n`, and inner products use the rectangle rule.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter::zakai::FilterRun;
use crate::model::measure::EmpiricalMeasure;
use crate::model::testfn::TestFunction;

/// Kernel contributions are cut off beyond this many `√ε`.
const TRUNCATION: f64 = 10.0;
/// Atoms must stay this many `√ε` inside the grid.
const MARGIN: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MollifierConfig {
    pub epsilon: f64,
    pub spacing: f64,
    /// Grid nodes cover `[-half_width, half_width]^n`.
    pub half_width: f64,
}

impl MollifierConfig {
    /// Validates `ε > 0` and `δx ≤ √ε/4`.
    pub fn new(epsilon: f64, spacing: f64, half_width: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !(spacing > 0.0) || !(half_width > 0.0) {
            return Err(Error::InvalidConfig("mollifier parameters must be positive".into()));
        }
        if spacing > libm::sqrt(epsilon) / 4.0 * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig("grid spacing must not exceed √ε/4".into()));
        }
        Ok(Self { epsilon, spacing, half_width })
    }

    /// Defaults for clouds like `points`: `ε = 0.05·s²` for the pooled
    /// coordinate standard deviation `s`, `δx = √ε/4`, and a box reaching
    /// `max|x| + 6√ε` times `1 + slack`.
    pub fn for_points(dim: usize, points: &[f64], slack: f64) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::InvalidConfig("no points to fit a mollifier to".into()));
        }
        let count = points.len() / dim;
        let mut var = 0.0;
        for axis in 0..dim {
            let mean = points.iter().skip(axis).step_by(dim).sum::<f64>() / count as f64;
            var += points.iter().skip(axis).step_by(dim).map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
        }
        let s2 = (var / dim as f64).max(1e-6);
        let epsilon = 0.05 * s2;
        let reach = points.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let root = libm::sqrt(epsilon);
        Self::new(epsilon, root / 4.0, (reach + MARGIN * root) * (1.0 + slack) + root)
    }

    /// Same `ε` and `δx` as [`Self::for_points`] on the first state of the
    /// first run, with the box widened to hold every state of every run.
    pub fn for_runs(runs: &[FilterRun]) -> Result<Self> {
        let first = runs
            .first()
            .and_then(|r| r.states.first())
            .ok_or_else(|| Error::InvalidConfig("no runs to fit a mollifier to".into()))?;
        let base = Self::for_points(first.dim(), &first.particles, 0.0)?;
        let reach = runs
            .iter()
            .flat_map(|r| r.states.iter())
            .flat_map(|s| s.particles.iter())
            .fold(0.0_f64, |a, x| a.max(x.abs()));
        base.widened(reach)
    }

    /// A copy whose box holds atoms up to `reach` in every coordinate.
    pub fn widened(self, reach: f64) -> Result<Self> {
        let root = self.root();
        Self::new(self.epsilon, self.spacing, self.half_width.max(reach + (MARGIN + 1.0) * root))
    }

    fn root(&self) -> f64 {
        libm::sqrt(self.epsilon)
    }

    fn half_nodes(&self) -> usize {
        libm::ceil(self.half_width / self.spacing) as usize
    }
}

/// Values on the grid `{j δx : j ∈ [-J, J]^n}`, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub dim: usize,
    pub spacing: f64,
    pub half_nodes: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    fn zeros(dim: usize, cfg: &MollifierConfig) -> Self {
        let j = cfg.half_nodes();
        let side = 2 * j + 1;
        Self { dim, spacing: cfg.spacing, half_nodes: j, values: vec![0.0; side.pow(dim as u32)] }
    }

    pub fn side(&self) -> usize {
        2 * self.half_nodes + 1
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        let side = self.side();
        let mut rest = flat;
        let mut x = vec![0.0; self.dim];
        for axis in (0..self.dim).rev() {
            x[axis] = ((rest % side) as f64 - self.half_nodes as f64) * self.spacing;
            rest /= side;
        }
        x
    }

    fn cell_volume(&self) -> f64 {
        libm::pow(self.spacing, self.dim as f64)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.half_nodes != other.half_nodes || self.spacing != other.spacing {
            return Err(Error::InvalidConfig("grid functions live on different grids".into()));
        }
        Ok(())
    }

    /// `⟨f, g⟩_ℍ ≈ δx^n Σ f g`.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.cell_volume() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn norm_sq(&self) -> f64 {
        self.cell_volume() * self.values.iter().map(|a| a * a).sum::<f64>()
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    /// `self - other`.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    /// `δx^n Σ f φ` against a function evaluated at the nodes.
    pub fn pair(&self, phi: &dyn TestFunction) -> f64 {
        self.cell_volume() * (0..self.values.len()).map(|i| self.values[i] * phi.value(&self.node(i))).sum::<f64>()
    }

    /// Tensor-product six-point Lagrange interpolation; zero outside the grid.
    pub fn sample(&self, x: &[f64]) -> f64 {
        const POINTS: usize = 6;
        let side = self.side() as isize;
        let mut base = vec![0isize; self.dim];
        let mut weights = vec![[0.0; POINTS]; self.dim];
        for axis in 0..self.dim {
            let u = x[axis] / self.spacing + self.half_nodes as f64;
            let i0 = libm::floor(u) as isize;
            if i0 < 2 || i0 + 3 >= side {
                return 0.0;
            }
            let s = u - i0 as f64;
            base[axis] = i0 - 2;
            // Nodes at offsets -2..=3 from the cell's left end.
            for (a, w) in weights[axis].iter_mut().enumerate() {
                let xa = a as f64 - 2.0;
                *w = (0..POINTS)
                    .filter(|&b| b != a)
                    .map(|b| {
                        let xb = b as f64 - 2.0;
                        (s - xb) / (xa - xb)
                    })
                    .product();
            }
        }
        let mut total = 0.0;
        for corner in 0..POINTS.pow(self.dim as u32) {
            let mut rest = corner;
            let mut flat = 0isize;
            let mut w = 1.0;
            for axis in (0..self.dim).rev() {
                let o = rest % POINTS;
                rest /= POINTS;
                w *= weights[axis][o];
                flat += (base[axis] + o as isize) * side.pow((self.dim - 1 - axis) as u32);
            }
            total += w * self.values[flat as usize];
        }
        total
    }
}

fn gaussian_1d(x: f64, epsilon: f64) -> f64 {
    libm::exp(-x * x / (2.0 * epsilon)) / libm::sqrt(2.0 * core::f64::consts::PI * epsilon)
}

/// `S_ε μ` on the grid of `cfg`.
pub fn smooth_measure(mu: &EmpiricalMeasure, cfg: &MollifierConfig) -> Result<GridFunction> {
    let order: Vec<usize> = (0..mu.len()).collect();
    smooth_atoms(mu.dim(), mu.points(), mu.weights(), &order, cfg)
}

/// `S_ε` of the atoms `points`/`weights`, added in the order given by `order`.
pub(crate) fn smooth_atoms(dim: usize, points: &[f64], weights: &[f64], order: &[usize], cfg: &MollifierConfig) -> Result<GridFunction> {
    let mut out = GridFunction::zeros(dim, cfg);
    let limit = cfg.half_nodes() as f64 * cfg.spacing - MARGIN * cfg.root();
    let radius = libm::ceil(TRUNCATION * cfg.root() / cfg.spacing) as isize;
    let j = out.half_nodes as isize;
    let side = out.side();
    let mut factors: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
    for &i in order {
        let x = &points[i * dim..(i + 1) * dim];
        let w = weights[i];
        if let Some(&position) = x.iter().find(|c| !(c.abs() <= limit)) {
            return Err(Error::GridCoverage { position, limit });
        }
        if w == 0.0 {
            continue;
        }
        for axis in 0..dim {
            let centre = libm::round(x[axis] / cfg.spacing) as isize;
            factors[axis].clear();
            for node in (centre - radius).max(-j)..=(centre + radius).min(j) {
                let g = gaussian_1d(node as f64 * cfg.spacing - x[axis], cfg.epsilon);
                factors[axis].push(((node + j) as usize, g));
            }
        }
        accumulate(&mut out.values, &factors, side, w);
    }
    Ok(out)
}

/// Adds `w · Π_axis factor_axis` over the box spanned by `factors`.
fn accumulate(values: &mut [f64], factors: &[Vec<(usize, f64)>], side: usize, w: f64) {
    fn rec(values: &mut [f64], factors: &[Vec<(usize, f64)>], side: usize, flat: usize, w: f64) {
        match factors.split_first() {
            None => values[flat] += w,
            Some((head, tail)) => {
                for &(idx, g) in head {
                    rec(values, tail, side, flat * side + idx, w * g);
                }
            }
        }
    }
    rec(values, factors, side, 0, w);
}

/// `S_ε φ` on the grid, by quadrature of `∫ k_ε(x - y) φ(y) dy` over nodes
/// extended past the grid edge by the kernel cut-off.
pub fn smooth_function(phi: &dyn TestFunction, cfg: &MollifierConfig) -> Result<GridFunction> {
    let dim = phi.dim();
    let mut out = GridFunction::zeros(dim, cfg);
    let j = out.half_nodes as isize;
    let radius = libm::ceil(TRUNCATION * cfg.root() / cfg.spacing) as isize;
    let wide = (j + radius) as usize;
    let wide_side = 2 * wide + 1;
    let kernel: Vec<f64> = (-radius..=radius).map(|o| cfg.spacing * gaussian_1d(o as f64 * cfg.spacing, cfg.epsilon)).collect();
    // Values of φ on the extended grid, then one separable pass per axis that
    // shrinks that axis back to the output grid.
    let mut shape: Vec<usize> = vec![wide_side; dim];
    let mut values: Vec<f64> = (0..wide_side.pow(dim as u32))
        .map(|flat| {
            let mut rest = flat;
            let mut x = vec![0.0; dim];
            for axis in (0..dim).rev() {
                x[axis] = ((rest % wide_side) as f64 - wide as f64) * cfg.spacing;
                rest /= wide_side;
            }
            phi.value(&x)
        })
        .collect();
    let out_side = out.side();
    for axis in 0..dim {
        let mut next_shape = shape.clone();
        next_shape[axis] = out_side;
        let stride: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut next = vec![0.0; next_shape.iter().product()];
        for o in 0..outer {
            for r in 0..out_side {
                for s in 0..stride {
                    let mut acc = 0.0;
                    for (ko, kv) in kernel.iter().enumerate() {
                        let src = r + ko;
                        acc += kv * values[(o * shape[axis] + src) * stride + s];
                    }
                    next[(o * out_side + r) * stride + s] = acc;
                }
            }
        }
        values = next;
        shape = next_shape;
    }
    out.values = values;
    Ok(out)
}

/// `|⟨μ, S_εφ⟩ - ⟨S_εμ, φ⟩_ℍ|`, with `S_εφ` interpolated at the atoms.
pub fn adjoint_identity_check(mu: &EmpiricalMeasure, phi: &dyn TestFunction, cfg: &MollifierConfig) -> Result<f64> {
    let smoothed_phi = smooth_function(phi, cfg)?;
    let smoothed_mu = smooth_measure(mu, cfg)?;
    let lhs = mu.integrate(|x| smoothed_phi.sample(x));
    Ok((lhs - smoothed_mu.pair(phi)).abs())
}

/// `E‖S_ε μ̂_t‖²_ℍ` across independent runs, with its standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Needs at least 20 runs, none of them resampled.
pub fn energy_curve(runs: &[FilterRun], cfg: &MollifierConfig) -> Result<EnergyCurve> {
    const MIN_RUNS: usize = 20;
    if runs.len() < MIN_RUNS {
        return Err(Error::EnsembleTooSmall { required: MIN_RUNS, found: runs.len() });
    }
    if runs.iter().any(|r| r.resampled) {
        return Err(Error::Resampled);
    }
    let steps = runs[0].states.len();
    let mut energies = Vec::with_capacity(runs.len());
    for run in runs {
        if run.states.len() != steps {
            return Err(Error::InvalidConfig("runs have different lengths".into()));
        }
        let mut e = Vec::with_capacity(steps);
        for s in &run.states {
            let top = s.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let scale = libm::exp(top) / s.len() as f64;
            let w: Vec<f64> = s.log_weights.iter().map(|l| libm::exp(l - top) * scale).collect();
            e.push(smooth_atoms(s.dim(), &s.particles, &w, &s.label_order(), cfg)?.norm_sq());
        }
        energies.push(e);
    }
    let count = runs.len() as f64;
    let mut curve = EnergyCurve { times: Vec::with_capacity(steps), mean: Vec::new(), stderr: Vec::new() };
    for k in 0..steps {
        let mean = energies.iter().map(|e| e[k]).sum::<f64>() / count;
        let var = energies.iter().map(|e| (e[k] - mean) * (e[k] - mean)).sum::<f64>() / (count - 1.0);
        curve.times.push(runs[0].states[k].time);
        curve.mean.push(mean);
        curve.stderr.push(libm::sqrt(var / count));
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallFit {
    /// Smallest `C ≥ 0` with `curve(t) - 3·stderr(t) ≤ curve(0)·e^{Ct}` on the grid.
    pub rate: f64,
    pub violated: bool,
}

/// Default cap on the fitted rate beyond which the bound counts as violated.
pub const GRONWALL_CAP: f64 = 50.0;

pub fn gronwall_check(curve: &EnergyCurve, cap: f64) -> GronwallFit {
    let start = curve.mean.first().copied().unwrap_or(0.0);
    let mut rate: f64 = 0.0;
    for k in 1..curve.mean.len() {
        let t = curve.times[k] - curve.times[0];
        let lower = curve.mean[k] - 3.0 * curve.stderr[k];
        if lower <= 0.0 || t <= 0.0 {
            continue;
        }
        let needed = libm::log(lower / start) / t;
        rate = if needed.is_nan() { f64::NAN } else { rate.max(needed) };
    }
    GronwallFit { rate, violated: !(rate.is_finite() && rate <= cap) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testfn::{GaussianBump, Polynomial, Window, Windowed};

    fn cfg1(eps: f64, half: f64) -> MollifierConfig {
        MollifierConfig::new(eps, libm::sqrt(eps) / 4.0, half).unwrap()
    }

    #[test]
    fn interpolation_reproduces_quintics() {
        let cfg = cfg1(0.05, 1.5);
        let mut g = GridFunction::zeros(1, &cfg);
        let p = |x: f64| 0.3 - x + 2.0 * x * x * x - 0.7 * libm::pow(x, 5.0);
        for i in 0..g.values.len() {
            g.values[i] = p(g.node(i)[0]);
        }
        for x in [-0.81, -0.2, 0.0, 0.123, 0.77] {
            assert!((g.sample(&[x]) - p(x)).abs() < 1e-12);
        }
        let mut g2 = GridFunction::zeros(2, &cfg);
        for i in 0..g2.values.len() {
            let x = g2.node(i);
            g2.values[i] = x[0] * x[0] * x[1] - 0.5 * x[1];
        }
        assert!((g2.sample(&[0.31, -0.47]) - (0.31 * 0.31 * -0.47 + 0.235)).abs() < 1e-12);
    }

    #[test]
    fn spacing_rule_is_enforced() {
        assert!(MollifierConfig::new(0.04, 0.06, 1.0).is_err());
        assert!(MollifierConfig::new(0.04, 0.05, 1.0).is_ok());
        assert!(MollifierConfig::new(0.0, 0.05, 1.0).is_err());
    }

    #[test]
    fn smoothed_dirac_norm_matches_closed_form() {
        for (dim, eps) in [(1usize, 0.05), (2, 0.1)] {
            let cfg = cfg1(eps, 3.0);
            let g = smooth_measure(&EmpiricalMeasure::dirac(&vec![0.0; dim]), &cfg).unwrap();
            let exact = libm::pow(4.0 * core::f64::consts::PI * eps, -(dim as f64) / 2.0);
            assert!(((g.norm_sq() - exact) / exact).abs() < 1e-6, "{dim}");
        }
    }

    #[test]
    fn grid_coverage_is_checked() {
        let cfg = cfg1(0.04, 1.0);
        let mu = EmpiricalMeasure::dirac(&[0.9]);
        assert!(matches!(smooth_measure(&mu, &cfg), Err(Error::GridCoverage { .. })));
    }

    #[test]
    fn smoothing_constants_gives_constants() {
        let cfg = cfg1(0.05, 2.0);
        let g = smooth_function(&Polynomial::constant(1, 1.0), &cfg).unwrap();
        assert!(g.values.iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn smoothing_a_gaussian_adds_variances() {
        let eps = 0.05;
        let cfg = cfg1(eps, 3.0);
        let g = smooth_function(&GaussianBump::density(vec![0.3], 0.2), &cfg).unwrap();
        let target = GaussianBump::density(vec![0.3], 0.2 + eps);
        for i in (0..g.values.len()).step_by(7) {
            assert!((g.values[i] - target.value(&g.node(i))).abs() < 1e-9);
        }
        let mu = smooth_measure(&EmpiricalMeasure::dirac(&[0.3]), &cfg).unwrap();
        let exact = GaussianBump::density(vec![0.3], eps);
        for i in (0..mu.values.len()).step_by(5) {
            assert!((mu.values[i] - exact.value(&mu.node(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_is_linear() {
        let cfg = cfg1(0.05, 2.0);
        let a = EmpiricalMeasure::new(1, vec![0.1, -0.3], vec![0.4, 0.6]).unwrap();
        let b = EmpiricalMeasure::new(1, vec![0.5], vec![2.0]).unwrap();
        let sa = smooth_measure(&a, &cfg).unwrap();
        let sb = smooth_measure(&b, &cfg).unwrap();
        let combined = EmpiricalMeasure::new(1, vec![0.1, -0.3, 0.5], vec![0.8, 1.2, 3.0]).unwrap();
        let sc = smooth_measure(&combined, &cfg).unwrap();
        for i in 0..sc.values.len() {
            assert!((sc.values[i] - (2.0 * sa.values[i] + 1.5 * sb.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identity_holds_and_converges() {
        let eps = 0.05;
        let mu = EmpiricalMeasure::new(1, vec![-0.4, 0.1, 0.35], vec![0.2, 0.5, 0.3]).unwrap();
        let phi = GaussianBump::density(vec![0.2], 0.3);
        let r = adjoint_identity_check(&mu, &phi, &cfg1(eps, 3.0)).unwrap();
        assert!(r < 1e-6, "{r}");
        let dirac = adjoint_identity_check(&EmpiricalMeasure::dirac(&[0.0]), &phi, &cfg1(eps, 3.0)).unwrap();
        assert!(dirac < 1e-6);
        let mut last = f64::INFINITY;
        for level in 0..3 {
            let dx = libm::sqrt(eps) / 4.0 / libm::pow(2.0, level as f64);
            let r = adjoint_identity_check(&mu, &phi, &MollifierConfig::new(eps, dx, 3.0).unwrap()).unwrap();
            assert!(r <= last / 4.0 * 1.05 || level == 0, "level {level}: {r} after {last}");
            last = r;
        }
    }

    #[test]
    fn two_dimensional_adjoint_identity() {
        let eps = 0.1;
        let mu = EmpiricalMeasure::new(2, vec![0.1, -0.2, -0.3, 0.4], vec![0.5, 0.5]).unwrap();
        let phi = Windowed::new(Polynomial::quadratic(&[1.0, 0.2, 0.2, 0.5], &[0.1, 0.0], 0.3), Window::Bump { center: vec![0.0, 0.0], radius: 2.0 });
        let r = adjoint_identity_check(&mu, &phi, &cfg1(eps, 3.5)).unwrap();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn gronwall_recovers_an_exponential_rate() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let curve = EnergyCurve { mean: times.iter().map(|t| libm::exp(2.0 * t)).collect(), stderr: vec![0.0; 11], times };
        let fit = gronwall_check(&curve, GRONWALL_CAP);
        assert!((fit.rate - 2.0).abs() < 1e-12);
        assert!(!fit.violated);
        let flat = EnergyCurve { mean: vec![1.0; 3], stderr: vec![0.1; 3], times: vec![0.0, 0.5, 1.0] };
        assert_eq!(gronwall_check(&flat, GRONWALL_CAP).rate, 0.0);
        let steep = EnergyCurve { mean: vec![1.0, 1e40], stderr: vec![0.0; 2], times: vec![0.0, 1.0] };
        assert!(gronwall_check(&steep, GRONWALL_CAP).violated);
    }

    #[test]
    fn energy_curve_needs_enough_runs() {
        let run = FilterRun {
            dt: 0.1,
            states: vec![crate::filter::FilterState::from_points(1, vec![0.0]).unwrap()],
            dvtilde: vec![],
            resampled: false,
        };
        let cfg = cfg1(0.05, 2.0);
        assert!(matches!(energy_curve(&vec![run.clone(); 5], &cfg), Err(Error::EnsembleTooSmall { .. })));
        let curve = energy_curve(&vec![run; 20], &cfg).unwrap();
        let exact = 1.0 / libm::sqrt(4.0 * core::f64::consts::PI * 0.05);
        assert!((curve.mean[0] - exact).abs() / exact < 1e-6);
        assert!(curve.stderr[0] < 1e-12);
    }
}
