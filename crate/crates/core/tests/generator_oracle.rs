//! Checks the generators against one-step simulation of the dynamics they describe.
//!
//! From `(x, μ)` one Euler step of size `δ` is taken for the state and for a
//! cloud of replicas of `μ`'s atoms, with independent noise for every replica.
//! Then `(E[F(X_δ, μ_δ)] - F(x, μ)) / δ → 𝕃F(x, μ)`. The first-order martingale
//! terms are subtracted sample by sample as control variates.

use std::sync::Arc;

use mvfilter_core::model::coefficients::{CoefficientSet, Dims, Evaluation};
use mvfilter_core::model::functional::{Coupling, CylindricalStateFunctional, Outer};
use mvfilter_core::model::generator::{generator_lbb, generator_lcal};
use mvfilter_core::model::measure::EmpiricalMeasure;
use mvfilter_core::model::testfn::{GaussianBump, Polynomial, SharedTestFunction, TestFunction};
use mvfilter_core::rng::{self, Domain};

fn model() -> CoefficientSet {
    CoefficientSet::builder("oracle", Dims { n: 2, d: 2, m: 1 })
        .drift(|_, x, mu, out| {
            out[0] = -x[0] + 0.5 * mu.mean()[0];
            out[1] = libm::sin(x[1]) - 0.3 * x[0] + 0.2 * mu.mean()[1];
        })
        .signal_diffusion(|_, x, _, out| {
            out.copy_from_slice(&[1.0 + 0.2 * libm::tanh(x[0]), 0.0, 0.3, 0.8]);
        })
        .correlated_diffusion(|_, x, mu, out| {
            out[0] = 0.4;
            out[1] = 0.2 * libm::cos(x[0]) + 0.1 * libm::tanh(mu.mean()[0]);
        })
        .build()
        .unwrap()
}

fn law() -> EmpiricalMeasure {
    let points = vec![
        0.1, -0.3, 0.8, 0.2, -0.5, 0.4, 1.2, -0.9, -0.2, 0.0, 0.4, 0.6, -1.0, 0.3, 0.6, -0.1, 0.0, 1.1, -0.7, -0.6,
    ];
    EmpiricalMeasure::uniform(2, points).unwrap()
}

struct Step {
    dw: Vec<f64>,
    dv: Vec<f64>,
}

fn euler(c: &CoefficientSet, x: &[f64], mu: &EmpiricalMeasure, delta: f64, s: &Step, e: &mut Evaluation) -> (Vec<f64>, Vec<f64>) {
    let inv = [1.0];
    c.evaluate(0.0, x, mu, &inv, e);
    let mut noise = vec![0.0; 2];
    for i in 0..2 {
        noise[i] = e.sigma0[i * 2] * s.dw[0] + e.sigma0[i * 2 + 1] * s.dw[1] + e.sigma1[i] * s.dv[0];
    }
    let next = (0..2).map(|i| x[i] + e.b1[i] * delta + noise[i]).collect();
    (next, noise)
}

fn draw(rng: &mut rng::StreamRng, delta: f64) -> Step {
    let (mut dw, mut dv) = (vec![0.0; 2], vec![0.0; 1]);
    rng::brownian_step(rng, delta, 1, &mut dw, &mut dv);
    Step { dw, dv }
}

/// Mean and standard error of `(F(X_δ, μ_δ) - F(x, μ) - control) / δ`.
fn simulate(c: &CoefficientSet, f: &CylindricalStateFunctional, x: &[f64], mu: &EmpiricalMeasure, replicas: usize, samples: usize) -> (f64, f64) {
    let delta = 1e-3;
    let base = f.value(x, mu);
    let z0 = f.moments(mu);
    let d0 = f.derivatives_with(x, &z0);
    let mut e = Evaluation::new(c.dims());
    let mut rng = rng::stream(17, Domain::Sampler, 0);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    let mut grad = vec![0.0; 2];
    for _ in 0..samples {
        let s = draw(&mut rng, delta);
        let (xn, noise) = euler(c, x, mu, delta, &s, &mut e);
        let mut control: f64 = d0.grad_x.iter().zip(&noise).map(|(g, n)| g * n).sum();
        let mut cloud = Vec::with_capacity(mu.len() * replicas * 2);
        let mut cloud_control = vec![0.0; f.inner.len()];
        for atom in 0..mu.len() {
            for _ in 0..replicas {
                let s = draw(&mut rng, delta);
                let (yn, noise) = euler(c, mu.point(atom), mu, delta, &s, &mut e);
                cloud.extend_from_slice(&yn);
                for (j, psi) in f.inner.iter().enumerate() {
                    psi.gradient(mu.point(atom), &mut grad);
                    cloud_control[j] += grad.iter().zip(&noise).map(|(g, n)| g * n).sum::<f64>();
                }
            }
        }
        let count = (mu.len() * replicas) as f64;
        control += d0.dz.iter().zip(&cloud_control).map(|(a, b)| a * b / count).sum::<f64>();
        let mu_next = EmpiricalMeasure::uniform(2, cloud).unwrap();
        let sample = (f.value(&xn, &mu_next) - base - control) / delta;
        sum += sample;
        sum_sq += sample * sample;
    }
    let n = samples as f64;
    let mean = sum / n;
    (mean, ((sum_sq / n - mean * mean) / n).sqrt())
}

fn functional() -> CylindricalStateFunctional {
    let state: SharedTestFunction = Arc::new(GaussianBump { center: vec![0.2, -0.1], variance: 0.8, amplitude: 2.0 });
    let inner: Vec<SharedTestFunction> =
        vec![Arc::new(Polynomial::affine(0.0, &[1.0, 0.0])), Arc::new(GaussianBump::density(vec![0.0, 0.3], 0.5))];
    CylindricalStateFunctional::new(state, Coupling::Product, Arc::new(Outer::Tanh { coeffs: vec![1.0, 0.7], offset: 0.1, scale: 1.5 }), inner)
}

#[test]
fn lbb_matches_one_step_simulation() {
    let c = model();
    let mu = law();
    let f = functional();
    for x in [[0.3, -0.2], [-0.8, 0.5]] {
        let exact = generator_lbb(&c, 0.0, &f, &mu, &x).unwrap();
        let (est, se) = simulate(&c, &f, &x, &mu, 20, 1500);
        assert!((est - exact).abs() < 4.0 * se + 0.02 * exact.abs().max(0.1), "x={x:?}: {est} ± {se} vs {exact}");
    }
}

#[test]
fn lbb_measure_part_is_visible_to_the_oracle() {
    // A functional of μ alone has no state part; the oracle still has to see
    // its drift through the law cloud.
    let c = model();
    let mu = law();
    let f = CylindricalStateFunctional::measure_only(
        2,
        Arc::new(Outer::Tanh { coeffs: vec![1.0, 1.0], offset: 0.0, scale: 1.0 }),
        vec![Arc::new(Polynomial::monomial(1.0, vec![2, 0])), Arc::new(Polynomial::affine(0.0, &[0.0, 1.0]))],
    );
    let exact = generator_lbb(&c, 0.0, &f, &mu, &[0.0, 0.0]).unwrap();
    assert!(exact.abs() > 0.05);
    let (est, se) = simulate(&c, &f, &[0.0, 0.0], &mu, 20, 1500);
    assert!((est - exact).abs() < 4.0 * se + 0.02 * exact.abs(), "{est} ± {se} vs {exact}");
}

#[test]
fn lcal_matches_one_step_simulation() {
    let c = model();
    let mu = law();
    let phi = GaussianBump { center: vec![0.5, 0.0], variance: 0.6, amplitude: 1.0 };
    let x = [0.1, 0.4];
    let exact = generator_lcal(&c, 0.0, &phi, &mu, &x).unwrap();
    let delta = 1e-3;
    let mut e = Evaluation::new(c.dims());
    let mut rng = rng::stream(5, Domain::Sampler, 1);
    let mut grad = vec![0.0; 2];
    phi.gradient(&x, &mut grad);
    let samples = 20_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let s = draw(&mut rng, delta);
        let (xn, noise) = euler(&c, &x, &mu, delta, &s, &mut e);
        let v = (phi.value(&xn) - phi.value(&x) - grad.iter().zip(&noise).map(|(g, n)| g * n).sum::<f64>()) / delta;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let se = ((sum_sq / n - mean * mean) / n).sqrt();
    assert!((mean - exact).abs() < 4.0 * se + 0.01 * exact.abs(), "{mean} ± {se} vs {exact}");
}
