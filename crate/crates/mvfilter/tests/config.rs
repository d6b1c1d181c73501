use mvfilter::config::EXPERIMENT_NAMES;
use mvfilter::{Diagnostic, ExperimentConfig, HarnessError};

#[test]
fn named_experiments_round_trip() {
    for name in EXPERIMENT_NAMES {
        let cfg = ExperimentConfig::named(name).unwrap();
        let again = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(cfg.hash(), again.hash());
    }
}

#[test]
fn hash_ignores_field_order() {
    let cfg = ExperimentConfig::named("smoke").unwrap();
    let value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    let object = value.as_object().unwrap();
    let reversed: Vec<String> = object.iter().rev().map(|(k, v)| format!("{}:{}", serde_json::to_string(k).unwrap(), v)).collect();
    let shuffled = format!("{{{}}}", reversed.join(","));
    assert_ne!(shuffled, serde_json::to_string(&value).unwrap());
    assert_eq!(ExperimentConfig::from_json(&shuffled).unwrap().hash(), cfg.hash());
}

#[test]
fn hash_changes_with_content() {
    let cfg = ExperimentConfig::named("smoke").unwrap();
    let mut other = cfg.clone();
    other.master_seed += 1;
    assert_ne!(cfg.hash(), other.hash());
    assert_eq!(cfg.experiment_id().len(), "smoke-".len() + 12);
}

#[test]
fn empty_sweep_axis_is_rejected() {
    let mut cfg = ExperimentConfig::named("smoke").unwrap();
    cfg.sweep.n_filt = Some(Vec::new());
    assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
}

#[test]
fn unknown_fields_and_presets_are_rejected() {
    let cfg = ExperimentConfig::named("smoke").unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    value["surprise"] = serde_json::json!(1);
    assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
    let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
    value["preset"]["name"] = serde_json::json!("no-such-model");
    assert!(ExperimentConfig::from_json(&value.to_string()).is_err());
    assert!(matches!(ExperimentConfig::named("no-such-model"), Err(HarnessError::UnknownPreset(_))));
}

#[test]
fn work_cap_is_enforced() {
    let mut cfg = ExperimentConfig::named("smoke").unwrap();
    cfg.max_work = 1e3;
    assert!(matches!(cfg.validate(), Err(HarnessError::WorkCap { .. })));
}

#[test]
fn tracking_needs_a_linear_preset() {
    let mut cfg = ExperimentConfig::named("smoke").unwrap();
    cfg.diagnostics.push(Diagnostic::Tracking);
    assert!(cfg.validate().is_err());
}

#[test]
fn cells_share_seeds_across_axes_and_couple_steps() {
    let mut cfg = ExperimentConfig::named("smoke").unwrap();
    cfg.sweep.dt = Some(vec![0.04, 0.02, 0.01]);
    cfg.sweep.n_filt = Some(vec![50, 100]);
    cfg.replicates = 2;
    let cells = cfg.cells().unwrap();
    assert_eq!(cells.len(), 12);
    let substeps: Vec<u32> = cells.iter().step_by(4).map(|c| c.noise_substeps).collect();
    assert_eq!(substeps, [4, 2, 1]);
    for c in &cells {
        assert_eq!(c.seed(cfg.master_seed), cells[c.replicate as usize].seed(cfg.master_seed));
    }
    assert_ne!(cells[0].seed(cfg.master_seed), cells[1].seed(cfg.master_seed));
}

#[test]
fn incommensurate_steps_keep_one_substep() {
    let mut cfg = ExperimentConfig::named("smoke").unwrap();
    cfg.sweep.dt = Some(vec![0.01, 0.003]);
    let cells = cfg.cells().unwrap();
    assert!(cells.iter().all(|c| c.noise_substeps == 1));
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = ExperimentConfig::from_json(
        r#"{
          "scenario": "tanh-dt-sweep",
          "preset": { "name": "tanh-observation", "params": { "gain": 2.0 } },
          "sim": { "t_end": 1.0, "dt": 0.005, "n_law": 400 },
          "filter": { "n_filt": 4000 },
          "ensemble": 20,
          "sweep": { "dt": [0.01, 0.005, 0.0025] },
          "replicates": 20,
          "diagnostics": ["mass", "zakai"],
          "master_seed": 1
        }"#,
    )
    .unwrap();
    assert_eq!(cfg.sim.noise_substeps, 1);
    assert_eq!(cfg.cells().unwrap().len(), 60);
    assert_eq!(cfg.preset, mvfilter_core::presets::Preset::by_name("tanh-observation").unwrap());
}
