use mvfilter_core::filter::kalman::kalman_bucy;
use mvfilter_core::filter::{run_filter, FilterConfig, FilterState};
use mvfilter_core::model::coefficients::{CoefficientSet, Dims};
use mvfilter_core::presets::{LinearParams, Preset};
use mvfilter_core::sde::{signal_path, simulate_law_flow, simulate_truth, InitialLaw, SimConfig};

#[test]
fn distribution_free_flow_is_a_set_of_independent_paths() {
    let c = CoefficientSet::builder("free", Dims { n: 2, d: 1, m: 1 })
        .drift(|_, x, _, out| {
            out[0] = -x[1];
            out[1] = libm::sin(x[0]);
        })
        .signal_diffusion(|_, x, _, out| out.copy_from_slice(&[0.5, 0.2 * libm::cos(x[1])]))
        .correlated_diffusion(|_, _, _, out| out.copy_from_slice(&[0.1, 0.3]))
        .build()
        .unwrap();
    let init = InitialLaw::Uniform { low: vec![-1.0, 0.0], high: vec![1.0, 2.0] };
    let cfg = SimConfig::new(0.5, 0.01, 16, 42);
    let flow = simulate_law_flow(&c, &init, &cfg).unwrap();
    for i in [0, 7, 15] {
        let path = signal_path(&c, &init, &cfg, &flow, i).unwrap();
        for k in 0..flow.len() {
            assert_eq!(&path[k * 2..k * 2 + 2], flow.at(k).point(i));
        }
    }
}

#[test]
fn linear_filter_tracks_the_kalman_mean() {
    let preset = Preset::CorrelatedLinear(LinearParams { sigma1: 0.5, ..LinearParams::default() });
    let c = preset.coefficients().unwrap();
    let init = preset.initial_law();
    let sim = SimConfig::new(2.0, 0.005, 100, 11);
    let law = simulate_law_flow(&c, &init, &sim).unwrap();
    let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
    let kb = kalman_bucy(&preset.linear_spec().unwrap(), &truth.y, sim.dt).unwrap();
    let run = run_filter(&c, &law, FilterState::sample(&init, 2000, 3).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(2000, 3)).unwrap();
    let mut worst: f64 = 0.0;
    for (s, k) in run.states.iter().zip(&kb) {
        let mean = s.normalized_mean().unwrap()[0];
        worst = worst.max((mean - k.mean[0]).abs() / k.cov[0].sqrt());
    }
    // 2000 particles: the particle error is a few percent of the posterior spread.
    assert!(worst < 0.25, "{worst}");
}

#[test]
fn seeds_reproduce_runs_exactly() {
    let preset = Preset::by_name("tanh-observation").unwrap();
    let c = preset.coefficients().unwrap();
    let init = preset.initial_law();
    let sim = SimConfig::new(0.5, 0.01, 64, 5);
    let go = || {
        let law = simulate_law_flow(&c, &init, &sim).unwrap();
        let truth = simulate_truth(&c, &law, &init, &sim).unwrap();
        run_filter(&c, &law, FilterState::sample(&init, 64, 1).unwrap(), &truth.dvtilde, &sim, &FilterConfig::new(64, 1)).unwrap()
    };
    assert_eq!(go(), go());
}
