//! Ready-made coefficient sets used by the test suite and the command-line tool.

use alloc::vec;

use crate::error::Result;
use crate::filter::kalman::LinearSpec;
use crate::model::coefficients::{CoefficientSet, Dims, HypothesisConstants};
use crate::sde::InitialLaw;

/// Scalar linear model `dX = aX dt + σ0 dW + σ1 dV`, `dY = cX dt + σ2 dV`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LinearParams {
    pub a: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub c: f64,
    pub sigma2: f64,
    pub mean0: f64,
    pub std0: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self { a: -1.0, sigma0: 1.0, sigma1: 0.0, c: 1.0, sigma2: 1.0, mean0: 0.0, std0: 0.5 }
    }
}

/// `dX = (aX + ā E[X]) dt + σ0 dW`, `dY = cX dt + σ2 dV`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MeanFieldParams {
    pub a: f64,
    pub abar: f64,
    pub sigma0: f64,
    pub c: f64,
    pub sigma2: f64,
    pub mean0: f64,
    pub std0: f64,
}

impl Default for MeanFieldParams {
    fn default() -> Self {
        Self { a: -1.0, abar: 0.5, sigma0: 1.0, c: 1.0, sigma2: 1.0, mean0: 1.0, std0: 0.5 }
    }
}

/// Bounded nonlinear model:
/// `b1 = -θ tanh(x) + κ tanh(E[X])`, constant `σ0`, `σ1`,
/// `b2 = γ tanh(x)`, constant `σ2`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TanhParams {
    pub theta: f64,
    pub kappa: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub gain: f64,
    pub sigma2: f64,
    pub mean0: f64,
    pub std0: f64,
}

impl Default for TanhParams {
    fn default() -> Self {
        Self { theta: 1.0, kappa: 0.5, sigma0: 0.6, sigma1: 0.4, gain: 2.0, sigma2: 1.0, mean0: 0.0, std0: 1.0 }
    }
}

/// The bounded model with noise entering through the sensor:
/// `dX = b̌1 dt + σ̌1 dV`, `dY = b̌2 dt + σ̌2 dV + σ̌3 dW`, `σ̌2² + σ̌3² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SensorParams {
    pub theta: f64,
    pub kappa: f64,
    pub sigma1: f64,
    pub gain: f64,
    pub sensor_v: f64,
    pub sensor_w: f64,
    pub mean0: f64,
    pub std0: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self { theta: 1.0, kappa: 0.5, sigma1: 0.8, gain: 2.0, sensor_v: 0.6, sensor_w: 0.8, mean0: 0.0, std0: 1.0 }
    }
}

/// Frozen signal observed through a constant `h`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ConstantParams {
    pub h: f64,
    pub x0: f64,
}

impl Default for ConstantParams {
    fn default() -> Self {
        Self { h: 1.0, x0: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "name", content = "params", rename_all = "kebab-case"))]
pub enum Preset {
    LinearGaussian(LinearParams),
    CorrelatedLinear(LinearParams),
    MeanFieldLinear(MeanFieldParams),
    TanhObservation(TanhParams),
    SensorCorrelated(SensorParams),
    ConstantH(ConstantParams),
}

pub const PRESET_NAMES: [&str; 6] =
    ["linear-gaussian", "correlated-linear", "mean-field-linear", "tanh-observation", "sensor-correlated", "constant-h"];

fn scalar() -> Dims {
    Dims { n: 1, d: 1, m: 1 }
}

impl Preset {
    /// The preset with default parameters.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "linear-gaussian" => Self::LinearGaussian(LinearParams::default()),
            "correlated-linear" => Self::CorrelatedLinear(LinearParams { sigma1: 0.5, ..LinearParams::default() }),
            "mean-field-linear" => Self::MeanFieldLinear(MeanFieldParams::default()),
            "tanh-observation" => Self::TanhObservation(TanhParams::default()),
            "sensor-correlated" => Self::SensorCorrelated(SensorParams::default()),
            "constant-h" => Self::ConstantH(ConstantParams::default()),
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LinearGaussian(_) => PRESET_NAMES[0],
            Self::CorrelatedLinear(_) => PRESET_NAMES[1],
            Self::MeanFieldLinear(_) => PRESET_NAMES[2],
            Self::TanhObservation(_) => PRESET_NAMES[3],
            Self::SensorCorrelated(_) => PRESET_NAMES[4],
            Self::ConstantH(_) => PRESET_NAMES[5],
        }
    }

    /// The linear-Gaussian description, for presets that have one.
    pub fn linear_spec(&self) -> Option<LinearSpec> {
        match *self {
            Self::LinearGaussian(p) | Self::CorrelatedLinear(p) => {
                Some(LinearSpec::scalar(p.a, p.sigma0, p.sigma1, p.c, p.sigma2, p.mean0, p.std0))
            }
            _ => None,
        }
    }

    pub fn initial_law(&self) -> InitialLaw {
        let gaussian = |mean: f64, std: f64| InitialLaw::Gaussian { mean: vec![mean], std: vec![std] };
        match *self {
            Self::LinearGaussian(p) | Self::CorrelatedLinear(p) => gaussian(p.mean0, p.std0),
            Self::MeanFieldLinear(p) => gaussian(p.mean0, p.std0),
            Self::TanhObservation(p) => gaussian(p.mean0, p.std0),
            Self::SensorCorrelated(p) => gaussian(p.mean0, p.std0),
            Self::ConstantH(p) => InitialLaw::PointMass { at: vec![p.x0] },
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet> {
        let name = self.name();
        match *self {
            Self::LinearGaussian(_) | Self::CorrelatedLinear(_) => self.linear_spec().expect("linear preset").coefficients(name),
            Self::MeanFieldLinear(p) => CoefficientSet::builder(name, scalar())
                .drift(move |_, x, mu, out| out[0] = p.a * x[0] + p.abar * mu.mean()[0])
                .signal_diffusion(move |_, _, _, out| out[0] = p.sigma0)
                .observation_drift(move |_, x, _, out| out[0] = p.c * x[0])
                .observation_diffusion(move |_, out| out[0] = p.sigma2)
                .constants(HypothesisConstants {
                    lipschitz: Some(p.a.abs().max(p.abar.abs())),
                    observation_lipschitz: Some(p.c.abs()),
                    ..HypothesisConstants::default()
                })
                .build(),
            Self::TanhObservation(p) => {
                let drift_bound = p.theta.abs() + p.kappa.abs();
                CoefficientSet::builder(name, scalar())
                    .drift(move |_, x, mu, out| out[0] = -p.theta * libm::tanh(x[0]) + p.kappa * libm::tanh(mu.mean()[0]))
                    .signal_diffusion(move |_, _, _, out| out[0] = p.sigma0)
                    .correlated_diffusion(move |_, _, _, out| out[0] = p.sigma1)
                    .observation_drift(move |_, x, _, out| out[0] = p.gain * libm::tanh(x[0]))
                    .observation_diffusion(move |_, out| out[0] = p.sigma2)
                    .constants(HypothesisConstants {
                        lipschitz: Some(p.theta.abs().max(p.kappa.abs())),
                        growth: Some(drift_bound * drift_bound + p.sigma0 * p.sigma0 + p.sigma1 * p.sigma1),
                        bound: Some(drift_bound + p.sigma0.abs() + p.sigma1.abs()),
                        observation_bound: Some(p.gain.abs().max(p.sigma2.abs()).max(1.0 / p.sigma2.abs())),
                        observation_lipschitz: Some(p.gain.abs()),
                    })
                    .build()
            }
            Self::SensorCorrelated(p) => {
                let drift_bound = p.theta.abs() + p.kappa.abs();
                CoefficientSet::sensor_builder(name, scalar(), vec![p.sensor_v], vec![p.sensor_w])
                    .drift(move |_, x, mu, out| out[0] = -p.theta * libm::tanh(x[0]) + p.kappa * libm::tanh(mu.mean()[0]))
                    .correlated_diffusion(move |_, _, _, out| out[0] = p.sigma1)
                    .observation_drift(move |_, x, _, out| out[0] = p.gain * libm::tanh(x[0]))
                    .constants(HypothesisConstants {
                        lipschitz: Some(p.theta.abs().max(p.kappa.abs())),
                        growth: Some(drift_bound * drift_bound + p.sigma1 * p.sigma1),
                        bound: Some(drift_bound + p.sigma1.abs()),
                        observation_bound: Some(p.gain.abs().max(1.0)),
                        observation_lipschitz: Some(p.gain.abs()),
                    })
                    .build()
            }
            Self::ConstantH(p) => CoefficientSet::builder(name, scalar())
                .observation_drift(move |_, _, _, out| out[0] = p.h)
                .constants(HypothesisConstants {
                    lipschitz: Some(0.0),
                    growth: Some(0.0),
                    bound: Some(0.0),
                    observation_bound: Some(p.h.abs().max(1.0)),
                    observation_lipschitz: Some(0.0),
                })
                .build(),
        }
    }
}
