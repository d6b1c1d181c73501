//! Experiment configuration: what to simulate, which diagnostics to run, and
//! over which grid of discretization parameters.

use std::path::PathBuf;

use mvfilter_core::filter::FilterConfig;
use mvfilter_core::mollifier::MollifierConfig;
use mvfilter_core::presets::Preset;
use mvfilter_core::rng::derive_seed;
use mvfilter_core::sde::SimConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnostic {
    /// Normalized particle mean against the Kalman–Bucy mean (linear presets only).
    Tracking,
    Mass,
    Zakai,
    Ks,
    Uniqueness,
    Gronwall,
    Fpe,
    Projected,
    Integrability,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 9] = [
        Self::Tracking,
        Self::Mass,
        Self::Zakai,
        Self::Ks,
        Self::Uniqueness,
        Self::Gronwall,
        Self::Fpe,
        Self::Projected,
        Self::Integrability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tracking => "tracking",
            Self::Mass => "mass",
            Self::Zakai => "zakai",
            Self::Ks => "ks",
            Self::Uniqueness => "uniqueness",
            Self::Gronwall => "gronwall",
            Self::Fpe => "fpe",
            Self::Projected => "projected",
            Self::Integrability => "integrability",
        }
    }

    /// Diagnostics that need an ensemble of independent filter runs.
    pub fn uses_ensemble(self) -> bool {
        matches!(self, Self::Gronwall | Self::Fpe | Self::Projected | Self::Integrability)
    }
}

/// Grids to sweep. A missing axis stays at the base value; a present axis must
/// not be empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_filt: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_law: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub preset: Preset,
    /// Base discretization. Its `seed` is ignored: every cell derives its own
    /// seeds from `master_seed`.
    pub sim: SimConfig,
    /// Base filter settings; `seed` is ignored as for `sim`.
    pub filter: FilterConfig,
    /// Smoothing grid for the energy-based diagnostics; fitted to the
    /// particles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollifier: Option<MollifierConfig>,
    /// Ensemble size `M` for the ensemble diagnostics.
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    #[serde(default)]
    pub sweep: Sweep,
    /// Independent repetitions of every cell.
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    pub diagnostics: Vec<Diagnostic>,
    /// Cap for the integrability diagnostic.
    #[serde(default = "default_integrability_cap")]
    pub integrability_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub master_seed: u64,
    /// Largest allowed `particles × steps` for a single cell.
    #[serde(default = "default_max_work")]
    pub max_work: f64,
}

fn default_ensemble() -> usize {
    20
}

fn default_replicates() -> u64 {
    1
}

fn default_integrability_cap() -> f64 {
    1e6
}

fn default_max_work() -> f64 {
    2e10
}

/// One point of the sweep grid, plus the replicate index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dt: f64,
    pub n_filt: usize,
    pub n_law: usize,
    pub ensemble: usize,
    /// `None` when the mollifier is fitted to the data.
    pub epsilon: Option<f64>,
    pub replicate: u64,
    /// Brownian sub-increments per step; see [`ExperimentConfig::cells`].
    pub noise_substeps: u32,
}

impl Cell {
    /// Seed shared by every cell of the same replicate, so that cells differing
    /// only in `dt` or `N` see coupled noise.
    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(master, &[self.replicate])
    }
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(json).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// Hex SHA-256 of the canonical JSON form (keys sorted, no whitespace),
    /// so it does not depend on how the input file ordered its fields.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("configs serialize");
        let canonical = serde_json::to_string(&value).expect("values serialize");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// `scenario-` followed by the first 12 hex digits of the hash.
    pub fn experiment_id(&self) -> String {
        format!("{}-{}", self.scenario, &self.hash()[..12])
    }

    fn axis<T: Copy>(grid: &Option<Vec<T>>, base: T) -> Vec<T> {
        grid.clone().unwrap_or_else(|| vec![base])
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.scenario.is_empty() || !self.scenario.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad(format!("scenario name {:?} must be non-empty ASCII letters, digits, '-' or '_'", self.scenario));
        }
        let s = &self.sweep;
        let empty = [
            ("dt", s.dt.as_ref().map(Vec::len)),
            ("n_filt", s.n_filt.as_ref().map(Vec::len)),
            ("n_law", s.n_law.as_ref().map(Vec::len)),
            ("ensemble", s.ensemble.as_ref().map(Vec::len)),
            ("epsilon", s.epsilon.as_ref().map(Vec::len)),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, len)| *len == Some(0)) {
            return bad(format!("sweep axis {axis} is empty"));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.diagnostics.is_empty() {
            return bad("no diagnostics requested".into());
        }
        if self.diagnostics.contains(&Diagnostic::Tracking) && self.preset.linear_spec().is_none() {
            return bad(format!("tracking needs a linear preset, not {}", self.preset.name()));
        }
        if let Some(eps) = &s.epsilon {
            if eps.iter().any(|e| !(*e > 0.0)) {
                return bad("sweep epsilon values must be positive".into());
            }
        }
        let c = self.preset.coefficients().map_err(HarnessError::Core)?;
        let battery = crate::battery::Battery::standard();
        if c.dims().n != battery.dim {
            return bad(format!("preset dimension {} does not match the battery dimension {}", c.dims().n, battery.dim));
        }
        for cell in self.cells()? {
            let sim = self.sim_for(&cell, 0);
            let steps = sim.steps().map_err(HarnessError::Core)?;
            if cell.n_filt == 0 {
                return bad("n_filt must be positive".into());
            }
            let ensemble_work = if self.diagnostics.iter().any(|d| d.uses_ensemble()) {
                if cell.ensemble < mvfilter_core::fpe::MIN_RUNS {
                    return bad(format!("ensemble size {} is below {}", cell.ensemble, mvfilter_core::fpe::MIN_RUNS));
                }
                cell.ensemble * cell.n_filt
            } else {
                0
            };
            let work = steps as f64 * (cell.n_law + 3 * cell.n_filt + ensemble_work) as f64;
            if work > self.max_work {
                return Err(HarnessError::WorkCap { work, cap: self.max_work });
            }
        }
        Ok(())
    }

    /// Every grid cell, replicate-minor. When several `dt` values are swept and
    /// each is an integer multiple of the smallest, coarser cells sum that many
    /// fine Brownian sub-increments per step, so all levels share one path.
    pub fn cells(&self) -> Result<Vec<Cell>, HarnessError> {
        let s = &self.sweep;
        let dts = Self::axis(&s.dt, self.sim.dt);
        let finest = dts.iter().copied().fold(f64::INFINITY, f64::min);
        if !(finest > 0.0) {
            return Err(HarnessError::Config("dt values must be positive".into()));
        }
        let mut cells = Vec::new();
        for &dt in &dts {
            let ratio = dt / finest;
            let rounded = ratio.round();
            let substeps = if (ratio - rounded).abs() < 1e-9 { rounded as u32 * self.sim.noise_substeps } else { self.sim.noise_substeps };
            for &n_filt in &Self::axis(&s.n_filt, self.filter.n_filt) {
                for &n_law in &Self::axis(&s.n_law, self.sim.n_law) {
                    for &ensemble in &Self::axis(&s.ensemble, self.ensemble) {
                        let eps_axis: Vec<Option<f64>> = match &s.epsilon {
                            Some(v) => v.iter().map(|e| Some(*e)).collect(),
                            None => vec![self.mollifier.map(|m| m.epsilon)],
                        };
                        for &epsilon in &eps_axis {
                            for replicate in 0..self.replicates {
                                cells.push(Cell { dt, n_filt, n_law, ensemble, epsilon, replicate, noise_substeps: substeps });
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    /// Only the base cell of every replicate.
    pub fn base_cells(&self) -> Vec<Cell> {
        (0..self.replicates)
            .map(|replicate| Cell {
                dt: self.sim.dt,
                n_filt: self.filter.n_filt,
                n_law: self.sim.n_law,
                ensemble: self.ensemble,
                epsilon: self.mollifier.map(|m| m.epsilon),
                replicate,
                noise_substeps: self.sim.noise_substeps,
            })
            .collect()
    }

    /// Simulation settings of `cell`, with the seed for `stream`.
    pub fn sim_for(&self, cell: &Cell, stream: u64) -> SimConfig {
        SimConfig {
            dt: cell.dt,
            n_law: cell.n_law,
            seed: derive_seed(cell.seed(self.master_seed), &[stream]),
            noise_substeps: cell.noise_substeps,
            ..self.sim.clone()
        }
    }

    pub fn filter_for(&self, cell: &Cell, stream: u64) -> FilterConfig {
        FilterConfig {
            n_filt: cell.n_filt,
            seed: derive_seed(cell.seed(self.master_seed), &[stream]),
            ..self.filter.clone()
        }
    }

    /// A built-in experiment by name: `smoke`, `determinism`, or any scenario preset name.
    pub fn named(name: &str) -> Result<Self, HarnessError> {
        let unknown = || HarnessError::UnknownPreset(name.to_string());
        let base = |preset: Preset, diagnostics: Vec<Diagnostic>| ExperimentConfig {
            scenario: name.to_string(),
            preset,
            sim: SimConfig::new(1.0, 0.01, 200, 0),
            filter: FilterConfig::new(1000, 0),
            mollifier: None,
            ensemble: 20,
            sweep: Sweep::default(),
            replicates: 1,
            diagnostics,
            integrability_cap: default_integrability_cap(),
            output: None,
            master_seed: 1,
            max_work: default_max_work(),
        };
        use Diagnostic::*;
        let cfg = match name {
            // Only diagnostics whose pass rule is not a Monte Carlo band, so
            // that the smoke run passes for every seed.
            "smoke" => {
                let mut cfg = base(
                    Preset::by_name("tanh-observation").ok_or_else(unknown)?,
                    vec![Mass, Zakai, Uniqueness, Gronwall, Integrability],
                );
                cfg.sim = SimConfig::new(0.1, 0.01, 100, 0);
                cfg.filter = FilterConfig::new(100, 0);
                cfg
            }
            "determinism" => {
                let mut cfg = base(
                    Preset::by_name("tanh-observation").ok_or_else(unknown)?,
                    vec![Mass, Zakai, Ks, Uniqueness, Fpe, Projected, Integrability],
                );
                cfg.sim = SimConfig::new(0.1, 0.01, 600, 0);
                cfg.filter = FilterConfig::new(1024, 0);
                cfg.sweep.dt = Some(vec![0.02, 0.01]);
                cfg
            }
            "linear-gaussian" | "correlated-linear" => {
                let mut cfg = base(Preset::by_name(name).ok_or_else(unknown)?, vec![Tracking, Mass, Ks]);
                cfg.sim = SimConfig::new(1.0, 0.001, 2, 0);
                cfg.filter = FilterConfig::new(5000, 0);
                cfg
            }
            "mean-field-linear" => base(Preset::by_name(name).ok_or_else(unknown)?, vec![Mass, Zakai, Ks, Uniqueness]),
            "tanh-observation" | "sensor-correlated" | "constant-h" => {
                base(Preset::by_name(name).ok_or_else(unknown)?, vec![Mass, Zakai, Ks, Uniqueness, Gronwall, Fpe, Projected, Integrability])
            }
            _ => return Err(unknown()),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Names accepted by [`ExperimentConfig::named`].
pub const EXPERIMENT_NAMES: [&str; 8] = [
    "smoke",
    "determinism",
    "linear-gaussian",
    "correlated-linear",
    "mean-field-linear",
    "tanh-observation",
    "sensor-correlated",
    "constant-h",
];
