//! simulate → filter → diagnostics for every cell of an experiment.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use mvfilter_core::filter::diagnostics::{KsCheck, MassCheck, ZakaiCheck};
use mvfilter_core::filter::kalman::kalman_bucy;
use mvfilter_core::filter::uniqueness::pathwise_uniqueness_gap;
use mvfilter_core::filter::{run_filter_with, FilterRun, FilterState};
use mvfilter_core::fpe::{fpe_residuals, integrability_check, projected_sde_check, Estimate, LawEnsemble};
use mvfilter_core::model::CoefficientSet;
use mvfilter_core::mollifier::{energy_curve, gronwall_check, MollifierConfig, GRONWALL_CAP};
use mvfilter_core::rng::derive_seed;
use mvfilter_core::sde::{simulate_law_flow, simulate_truth, InitialLaw, LawFlow, TruthPath};
use rayon::prelude::*;

use crate::battery::{Battery, Resolved};
use crate::config::{Cell, Diagnostic, ExperimentConfig};
use crate::records::ResultRecord;
use crate::HarnessError;

/// Sub-streams of a cell seed.
const STREAM_FILTER: u64 = 1;
const STREAM_SECOND_CLOUD: u64 = 2;
const STREAM_ENSEMBLE: u64 = 3;

/// Tracking tolerance as a fraction of the stationary signal standard deviation.
pub const TRACKING_TOLERANCE: f64 = 0.05;
/// Band for the normalized-filter check: the larger of this many standard errors…
pub const KS_SIGMAS: f64 = 3.0;
/// …and this relative error.
pub const KS_RELATIVE: f64 = 0.02;
/// Monte Carlo band for the ensemble checks.
pub const ENSEMBLE_SIGMAS: f64 = 3.0;
/// Fallback grid half-width when only `ε` is given.
const DEFAULT_HALF_WIDTH: f64 = 8.0;

/// Runs every cell and returns its records, in cell order. Cells run in
/// parallel; each derives all of its randomness from the master seed and its
/// own coordinates, so the output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>, HarnessError> {
    cfg.validate()?;
    let cells = cfg.cells()?;
    let battery = Battery::standard().resolve()?;
    let per_cell: Vec<Result<Vec<ResultRecord>, HarnessError>> =
        cells.par_iter().map(|cell| run_cell(cfg, &battery, cell)).collect();
    let mut out = Vec::new();
    for r in per_cell {
        out.extend(r?);
    }
    Ok(out)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    cell: &'a Cell,
    id: String,
    hash: String,
}

impl Context<'_> {
    fn record(&self, diagnostic: Diagnostic, target: &str, metrics: &[(&str, f64)], passed: bool, series: Vec<f64>, started: Instant) -> ResultRecord {
        ResultRecord {
            experiment_id: self.id.clone(),
            version: crate::VERSION.to_string(),
            config_hash: self.hash.clone(),
            diagnostic: diagnostic.name().to_string(),
            target: target.to_string(),
            cell: *self.cell,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            passed,
            series,
            wall_clock_s: started.elapsed().as_secs_f64(),
        }
    }

    fn wants(&self, d: Diagnostic) -> bool {
        self.cfg.diagnostics.contains(&d)
    }
}

/// All records of one cell, ordered by diagnostic then battery entry.
pub fn run_cell(cfg: &ExperimentConfig, battery: &Resolved, cell: &Cell) -> Result<Vec<ResultRecord>, HarnessError> {
    let ctx = Context { cfg, cell, id: cfg.experiment_id(), hash: cfg.hash() };
    let c = cfg.preset.coefficients()?;
    let init = cfg.preset.initial_law();
    let sim = cfg.sim_for(cell, 0);
    let law = simulate_law_flow(&c, &init, &sim)?;
    let truth = simulate_truth(&c, &law, &init, &sim)?;
    let mut records = Vec::new();

    if [Diagnostic::Tracking, Diagnostic::Mass, Diagnostic::Zakai, Diagnostic::Ks].iter().any(|d| ctx.wants(*d)) {
        records.extend(single_run(&ctx, battery, &c, &init, &law, &truth)?);
    }
    if ctx.wants(Diagnostic::Uniqueness) {
        let started = Instant::now();
        let filter = cfg.filter_for(cell, STREAM_FILTER);
        let a = FilterState::sample(&init, cell.n_filt, filter.seed)?;
        let b = FilterState::sample(&init, cell.n_filt, derive_seed(filter.seed, &[STREAM_SECOND_CLOUD]))?;
        let mollifier = cell.epsilon.map(|e| explicit_mollifier(cfg, e)).transpose()?;
        let gap = pathwise_uniqueness_gap(&c, &law, &truth.dvtilde, a, b, &sim, &filter, mollifier)?;
        let terminal = gap.terminal();
        records.push(ctx.record(
            Diagnostic::Uniqueness,
            "gap",
            &[("terminal", terminal), ("epsilon", gap.mollifier.epsilon)],
            terminal.is_finite(),
            gap.gap,
            started,
        ));
    }
    if cfg.diagnostics.iter().any(|d| d.uses_ensemble()) {
        let seed = derive_seed(cell.seed(cfg.master_seed), &[STREAM_ENSEMBLE]);
        let ens = LawEnsemble::generated(&c, &law, init.clone(), sim.clone(), cell.n_filt, cell.ensemble, seed)?;
        records.extend(ensemble_checks(&ctx, battery, &ens)?);
    }
    Ok(records)
}

fn explicit_mollifier(cfg: &ExperimentConfig, epsilon: f64) -> Result<MollifierConfig, HarnessError> {
    let half_width = cfg.mollifier.map_or(DEFAULT_HALF_WIDTH, |m| m.half_width);
    Ok(MollifierConfig::new(epsilon, epsilon.sqrt() / 4.0, half_width)?)
}

/// One filter pass feeding tracking, mass, Zakai and normalized-filter checks.
fn single_run(
    ctx: &Context,
    battery: &Resolved,
    c: &CoefficientSet,
    init: &InitialLaw,
    law: &LawFlow,
    truth: &TruthPath,
) -> Result<Vec<ResultRecord>, HarnessError> {
    let started = Instant::now();
    let cell = ctx.cell;
    let sim = ctx.cfg.sim_for(cell, 0);
    let filter = ctx.cfg.filter_for(cell, STREAM_FILTER);
    let dv = &truth.dvtilde;

    let oracle = match ctx.cfg.preset.linear_spec() {
        Some(spec) if ctx.wants(Diagnostic::Tracking) => {
            let stationary = ((spec.sigma0[0].powi(2) + spec.sigma1[0].powi(2)) / (2.0 * spec.a[0].abs())).sqrt();
            Some((kalman_bucy(&spec, &truth.y, cell.dt)?, stationary))
        }
        _ => None,
    };
    let mut tracking = Vec::new();
    let mut mass = ctx.wants(Diagnostic::Mass).then(|| MassCheck::new(c, law, dv, cell.dt)).transpose()?;
    let phis: Vec<_> = battery.test_functions.iter().map(|(_, f)| f.clone()).collect();
    let mut zakai = ctx.wants(Diagnostic::Zakai).then(|| ZakaiCheck::new(c, law, dv, cell.dt, phis)).transpose()?;
    let mut ks = if ctx.wants(Diagnostic::Ks) {
        battery.state_functionals.iter().map(|(_, f)| KsCheck::new(c, law, dv, cell.dt, Arc::clone(f))).collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };

    let initial = FilterState::sample(init, cell.n_filt, filter.seed)?;
    run_filter_with(c, law, initial, dv, &sim, &filter, |k, s| {
        if let Some((kb, _)) = &oracle {
            tracking.push((s.normalized_mean()?[0] - kb[k].mean[0]).abs());
        }
        if let Some(m) = mass.as_mut() {
            m.observe(k, s)?;
        }
        if let Some(z) = zakai.as_mut() {
            z.observe(k, s)?;
        }
        ks.iter_mut().try_for_each(|check| check.observe(k, s))
    })?;

    let mut out = Vec::new();
    if let Some((_, stationary)) = oracle {
        let average = tracking.iter().sum::<f64>() / tracking.len() as f64;
        let tolerance = TRACKING_TOLERANCE * stationary;
        out.push(ctx.record(
            Diagnostic::Tracking,
            "kalman-bucy-mean",
            &[("average_error", average), ("tolerance", tolerance)],
            average <= tolerance,
            tracking,
            started,
        ));
    }
    if let Some(m) = mass {
        let r = m.finish();
        let (terminal, sup) = (r.terminal(), r.sup());
        out.push(ctx.record(Diagnostic::Mass, "mass", &[("terminal", terminal), ("sup", sup)], sup.is_finite(), r.residual, started));
    }
    if let Some(z) = zakai {
        for ((id, _), r) in battery.test_functions.iter().zip(z.finish()) {
            let (terminal, sup) = (r.terminal(), r.sup());
            out.push(ctx.record(Diagnostic::Zakai, id, &[("terminal", terminal), ("sup", sup)], sup.is_finite(), r.residual, started));
        }
    }
    for ((id, _), check) in battery.state_functionals.iter().zip(ks) {
        let r = check.finish();
        let metrics = [
            ("residual", r.terminal_residual()),
            ("standard_error", r.terminal_standard_error()),
            ("value", r.filter_value.last().copied().unwrap_or(0.0)),
        ];
        let passed = r.passes(KS_SIGMAS, KS_RELATIVE);
        out.push(ctx.record(Diagnostic::Ks, id, &metrics, passed, r.residual(), started));
    }
    Ok(out)
}

fn estimate_metrics(e: Estimate) -> [(&'static str, f64); 2] {
    [("mean", e.mean), ("standard_error", e.stderr)]
}

fn ensemble_checks(ctx: &Context, battery: &Resolved, ens: &LawEnsemble) -> Result<Vec<ResultRecord>, HarnessError> {
    let mut out = Vec::new();
    if ctx.wants(Diagnostic::Gronwall) {
        let started = Instant::now();
        let runs = (0..ens.len()).map(|j| ens.run(j)).collect::<Result<Vec<FilterRun>, _>>()?;
        let mollifier = match ctx.cell.epsilon {
            Some(e) => {
                let reach = runs.iter().flat_map(|r| r.states.iter()).flat_map(|s| s.particles.iter()).fold(0.0_f64, |a, x| a.max(x.abs()));
                explicit_mollifier(ctx.cfg, e)?.widened(reach)?
            }
            None => MollifierConfig::for_runs(&runs)?,
        };
        let curve = energy_curve(&runs, &mollifier)?;
        let fit = gronwall_check(&curve, GRONWALL_CAP);
        out.push(ctx.record(
            Diagnostic::Gronwall,
            "energy",
            &[("rate", fit.rate), ("cap", GRONWALL_CAP), ("epsilon", mollifier.epsilon)],
            !fit.violated,
            curve.mean,
            started,
        ));
    }
    if ctx.wants(Diagnostic::Fpe) {
        let started = Instant::now();
        let functionals: Vec<_> = battery.measure_functionals.iter().map(|(_, g)| g.clone()).collect();
        for ((id, _), report) in battery.measure_functionals.iter().zip(fpe_residuals(ens, &functionals)?) {
            let series = report.residual.iter().map(|e| e.mean).collect();
            out.push(ctx.record(Diagnostic::Fpe, id, &estimate_metrics(report.terminal()), report.passes(ENSEMBLE_SIGMAS), series, started));
        }
    }
    if ctx.wants(Diagnostic::Projected) {
        let started = Instant::now();
        let report = projected_sde_check(ens, &battery.projected)?;
        let passed = report.passes(ENSEMBLE_SIGMAS);
        let mut metrics = Vec::new();
        let names: Vec<String> = (0..report.drift.len())
            .map(|u| format!("drift_{u}"))
            .chain(report.covariation.iter().map(|((u, v), _)| format!("covariation_{u}_{v}")))
            .collect();
        for (name, e) in names.iter().zip(report.drift.iter().chain(report.covariation.iter().map(|(_, e)| e))) {
            metrics.push((format!("{name}_mean"), e.mean));
            metrics.push((format!("{name}_standard_error"), e.stderr));
        }
        let borrowed: Vec<(&str, f64)> = metrics.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        out.push(ctx.record(Diagnostic::Projected, "projected", &borrowed, passed, Vec::new(), started));
    }
    if ctx.wants(Diagnostic::Integrability) {
        let started = Instant::now();
        let cap = ctx.cfg.integrability_cap;
        let (metrics, passed) = match integrability_check(ens, cap) {
            Ok(r) => ([("value", r.value.mean), ("standard_error", r.value.stderr), ("cap", cap)], true),
            Err(mvfilter_core::Error::IntegrabilityCap { value, .. }) => ([("value", value), ("standard_error", f64::NAN), ("cap", cap)], false),
            Err(e) => return Err(e.into()),
        };
        out.push(ctx.record(Diagnostic::Integrability, "integrability", &metrics, passed, Vec::new(), started));
    }
    Ok(out)
}
