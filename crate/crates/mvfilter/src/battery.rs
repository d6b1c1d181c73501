//! The versioned functional battery: named test functions, state functionals
//! for the normalized-filter check, measure functionals for the ensemble
//! residual, and the pair used by the projected check.

use std::collections::BTreeMap;
use std::sync::Arc;

use mvfilter_core::model::functional::{Coupling, Outer};
use mvfilter_core::model::testfn::{GaussianBump, Polynomial, SharedTestFunction, Windowed};
use mvfilter_core::model::{CylindricalStateFunctional, MeasureFunctional};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// The battery shipped with the crate.
pub const STANDARD: &str = include_str!("../battery/battery-v1.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionSpec {
    Constant { value: f64 },
    Affine { offset: f64, coeffs: Vec<f64> },
    GaussianBump { center: Vec<f64>, variance: f64, amplitude: f64 },
    /// One coordinate, cut off smoothly between `inner` and `outer`.
    Coordinate { axis: usize, inner: f64, outer: f64 },
    /// The constant 1 on `|x| ≤ inner`, zero beyond `outer`.
    Plateau { inner: f64, outer: f64 },
}

impl FunctionSpec {
    pub fn build(&self, dim: usize) -> Result<SharedTestFunction, HarnessError> {
        let bad = |what: &str| Err(HarnessError::Battery(format!("{what} does not fit dimension {dim}")));
        Ok(match self {
            Self::Constant { value } => Arc::new(Polynomial::constant(dim, *value)),
            Self::Affine { offset, coeffs } => {
                if coeffs.len() != dim {
                    return bad("affine coefficients");
                }
                Arc::new(Polynomial::affine(*offset, coeffs))
            }
            Self::GaussianBump { center, variance, amplitude } => {
                if center.len() != dim {
                    return bad("bump center");
                }
                if !(*variance > 0.0) {
                    return Err(HarnessError::Battery("bump variance must be positive".into()));
                }
                Arc::new(GaussianBump { center: center.clone(), variance: *variance, amplitude: *amplitude })
            }
            Self::Coordinate { axis, inner, outer } => {
                if *axis >= dim {
                    return bad("coordinate axis");
                }
                check_window(*inner, *outer)?;
                Arc::new(Windowed::coordinate(dim, *axis, *inner, *outer))
            }
            Self::Plateau { inner, outer } => {
                check_window(*inner, *outer)?;
                Arc::new(Windowed::unit(dim, *inner, *outer))
            }
        })
    }
}

fn check_window(inner: f64, outer: f64) -> Result<(), HarnessError> {
    if inner >= 0.0 && outer > inner {
        Ok(())
    } else {
        Err(HarnessError::Battery(format!("window needs 0 <= inner < outer, got {inner} and {outer}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedFunction {
    pub id: String,
    pub function: FunctionSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateEntry {
    pub id: String,
    pub state: String,
    #[serde(default = "product")]
    pub coupling: Coupling,
    #[serde(default)]
    pub outer: Option<Outer>,
    #[serde(default)]
    pub inner: Vec<String>,
}

fn product() -> Coupling {
    Coupling::Product
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureEntry {
    pub id: String,
    pub outer: Outer,
    pub inner: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Battery {
    pub name: String,
    pub version: u32,
    pub dim: usize,
    pub test_functions: Vec<NamedFunction>,
    pub state_functionals: Vec<StateEntry>,
    pub measure_functionals: Vec<MeasureEntry>,
    pub projected: Vec<String>,
}

/// A battery with every entry built and checked.
#[derive(Clone)]
pub struct Resolved {
    pub dim: usize,
    pub test_functions: Vec<(String, SharedTestFunction)>,
    pub state_functionals: Vec<(String, Arc<CylindricalStateFunctional>)>,
    pub measure_functionals: Vec<(String, MeasureFunctional)>,
    pub projected: Vec<SharedTestFunction>,
}

impl Battery {
    pub fn standard() -> Self {
        Self::parse(STANDARD).expect("the shipped battery parses")
    }

    pub fn parse(json: &str) -> Result<Self, HarnessError> {
        let battery: Self = serde_json::from_str(json).map_err(|e| HarnessError::Battery(e.to_string()))?;
        battery.resolve()?;
        Ok(battery)
    }

    /// `name-v<version>`, as recorded next to results.
    pub fn label(&self) -> String {
        format!("{}-v{}", self.name, self.version)
    }

    pub fn resolve(&self) -> Result<Resolved, HarnessError> {
        let dim = self.dim;
        if dim == 0 {
            return Err(HarnessError::Battery("dimension must be positive".into()));
        }
        let mut table = BTreeMap::new();
        let mut test_functions = Vec::with_capacity(self.test_functions.len());
        for f in &self.test_functions {
            let built = f.function.build(dim)?;
            if table.insert(f.id.clone(), built.clone()).is_some() {
                return Err(HarnessError::Battery(format!("duplicate test function id {}", f.id)));
            }
            test_functions.push((f.id.clone(), built));
        }
        let lookup = |id: &String| {
            table.get(id).cloned().ok_or_else(|| HarnessError::Battery(format!("unknown test function id {id}")))
        };
        let lookup_all = |ids: &[String]| ids.iter().map(lookup).collect::<Result<Vec<_>, _>>();
        let arity_error = |id: &str| HarnessError::Battery(format!("outer arity of {id} does not match its inner list"));

        let mut state_functionals = Vec::with_capacity(self.state_functionals.len());
        for e in &self.state_functionals {
            let state = lookup(&e.state)?;
            let functional = match &e.outer {
                None if e.inner.is_empty() => CylindricalStateFunctional::state_only(state),
                None => return Err(arity_error(&e.id)),
                Some(outer) => {
                    let inner = lookup_all(&e.inner)?;
                    if mvfilter_core::model::functional::MeasureOuter::arity(outer) != inner.len() {
                        return Err(arity_error(&e.id));
                    }
                    CylindricalStateFunctional::new(state, e.coupling, Arc::new(outer.clone()), inner)
                }
            };
            state_functionals.push((e.id.clone(), Arc::new(functional)));
        }

        let mut measure_functionals = Vec::with_capacity(self.measure_functionals.len());
        for e in &self.measure_functionals {
            let inner = lookup_all(&e.inner)?;
            if mvfilter_core::model::functional::MeasureOuter::arity(&e.outer) != inner.len() {
                return Err(arity_error(&e.id));
            }
            measure_functionals.push((e.id.clone(), MeasureFunctional::new(Arc::new(e.outer.clone()), inner)));
        }

        Ok(Resolved {
            dim,
            test_functions,
            state_functionals,
            measure_functionals,
            projected: lookup_all(&self.projected)?,
        })
    }
}
