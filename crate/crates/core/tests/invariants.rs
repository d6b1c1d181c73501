use std::sync::Arc;

use mvfilter_core::filter::{zakai_step, FilterState};
use mvfilter_core::model::coefficients::{CoefficientSet, Dims};
use mvfilter_core::model::functional::{MeasureFunctional, Outer};
use mvfilter_core::model::measure::EmpiricalMeasure;
use mvfilter_core::model::testfn::Polynomial;
use mvfilter_core::model::wasserstein::wasserstein2;
use mvfilter_core::mollifier::{smooth_measure, MollifierConfig};
use proptest::prelude::*;

fn cloud(max: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec((-2.0f64..2.0, 0.05f64..1.0), 1..max).prop_map(|atoms| {
        let (points, weights): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        EmpiricalMeasure::new(1, points, weights).unwrap().as_probability().unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_is_a_metric(a in cloud(8), b in cloud(8), c in cloud(8)) {
        let ab = wasserstein2(&a, &b).unwrap().value;
        let ba = wasserstein2(&b, &a).unwrap().value;
        let ac = wasserstein2(&a, &c).unwrap().value;
        let cb = wasserstein2(&c, &b).unwrap().value;
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab <= ac + cb + 1e-9);
        prop_assert!(wasserstein2(&a, &a).unwrap().value < 1e-9);
    }

    #[test]
    fn w2_of_a_shift_is_the_shift(a in cloud(10), shift in -1.0f64..1.0) {
        let b = a.push_forward(|x, y| y[0] = x[0] + shift);
        prop_assert!((wasserstein2(&a, &b).unwrap().value - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_preserves_mass(a in cloud(12)) {
        let cfg = MollifierConfig::new(0.04, 0.05, 4.0).unwrap();
        let g = smooth_measure(&a, &cfg).unwrap();
        let total: f64 = g.values.iter().sum::<f64>() * cfg.spacing;
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_observation_never_changes_weights(
        xs in prop::collection::vec(-3.0f64..3.0, 1..20),
        dv in -0.3f64..0.3,
        slope in -2.0f64..2.0,
    ) {
        let c = CoefficientSet::builder("h0", Dims { n: 1, d: 1, m: 1 })
            .drift(move |_, x, _, out| out[0] = slope * x[0])
            .signal_diffusion(|_, _, _, out| out[0] = 1.0)
            .correlated_diffusion(|_, _, _, out| out[0] = 0.5)
            .build()
            .unwrap();
        let law = EmpiricalMeasure::dirac(&[0.0]);
        let n = xs.len();
        let state = FilterState::from_points(1, xs).unwrap();
        let dw = vec![0.01; n];
        let next = zakai_step(&c, &law, &state, &[dv], 0.01, &dw).unwrap();
        prop_assert_eq!(next.mass(), 1.0);
    }

    #[test]
    fn particle_step_commutes_with_permutations(
        xs in prop::collection::vec(-3.0f64..3.0, 2..16),
        dv in -0.3f64..0.3,
        rot in 0usize..16,
    ) {
        let c = CoefficientSet::builder("tanh", Dims { n: 1, d: 1, m: 1 })
            .drift(|_, x, mu, out| out[0] = -x[0] + mu.mean()[0])
            .signal_diffusion(|_, _, _, out| out[0] = 0.7)
            .observation_drift(|_, x, _, out| out[0] = libm::tanh(x[0]))
            .build()
            .unwrap();
        let law = EmpiricalMeasure::uniform(1, vec![0.5, -0.5, 1.0]).unwrap();
        let n = xs.len();
        let dw: Vec<f64> = (0..n).map(|i| 0.01 * i as f64).collect();
        let state = FilterState::from_points(1, xs).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let dw_perm: Vec<f64> = perm.iter().map(|&p| dw[p]).collect();
        let a = zakai_step(&c, &law, &state, &[dv], 0.01, &dw).unwrap();
        let b = zakai_step(&c, &law, &state.permuted(&perm), &[dv], 0.01, &dw_perm).unwrap();
        prop_assert_eq!(a.permuted(&perm), b);
    }

    #[test]
    fn linear_functionals_are_linear(a in cloud(10), s in 0.1f64..3.0) {
        let g = MeasureFunctional::new(
            Arc::new(Outer::Linear { coeffs: vec![2.0, -1.0], offset: 0.0 }),
            vec![Arc::new(Polynomial::affine(0.0, &[1.0])), Arc::new(Polynomial::monomial(1.0, vec![2]))],
        );
        let scaled = a.scaled(s).unwrap();
        prop_assert!((g.value(&scaled) - s * g.value(&a)).abs() < 1e-9 * (1.0 + g.value(&a).abs() * s));
    }
}
