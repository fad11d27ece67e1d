//! Analytic shapes for potentials and exterior data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{bump, Potential, Regularity};
use crate::grid::{GridFunction, IndexSets, Support};
use crate::sobolev::SobolevMachinery;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialProfile {
    Zero,
    Constant {
        value: f64,
    },
    /// `amplitude · exp(-1/(1-t²))` rescaled so the peak equals `amplitude`.
    Bump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `values[i]` on `[breaks[i-1], breaks[i])`, with `breaks` increasing and
    /// one more value than breakpoints.
    Piecewise {
        breaks: Vec<f64>,
        values: Vec<f64>,
    },
    /// Values on the omega nodes, in node order.
    Samples {
        values: Vec<f64>,
    },
    /// Samples read from a CSV file (last column, omega node order).
    File {
        path: String,
    },
}

impl PotentialProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialProfile::Bump { width, .. } if !(*width > 0.0) => {
                Err(Error::Config("bump width must be positive".into()))
            }
            PotentialProfile::Piecewise { breaks, values } => {
                if values.len() != breaks.len() + 1 {
                    return Err(Error::Config(
                        "piecewise potential needs one more value than breakpoints".into(),
                    ));
                }
                if breaks.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("piecewise breakpoints must increase".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Pointwise value; `None` for sampled profiles.
    pub fn eval(&self, x: f64) -> Option<f64> {
        Some(match self {
            PotentialProfile::Zero => 0.0,
            PotentialProfile::Constant { value } => *value,
            PotentialProfile::Bump {
                amplitude,
                center,
                width,
            } => amplitude * bump(x, *center, *width) * std::f64::consts::E,
            PotentialProfile::Piecewise { breaks, values } => {
                values[breaks.iter().take_while(|&&b| x >= b).count()]
            }
            PotentialProfile::Samples { .. } | PotentialProfile::File { .. } => return None,
        })
    }

    pub fn regularity(&self) -> Regularity {
        match self {
            PotentialProfile::Piecewise { .. }
            | PotentialProfile::Samples { .. }
            | PotentialProfile::File { .. } => Regularity::Bounded,
            _ => Regularity::Continuous,
        }
    }

    pub fn sample(&self, m: &SobolevMachinery, sets: &IndexSets) -> Result<Potential> {
        self.validate()?;
        let values = match self {
            PotentialProfile::Samples { values } => {
                if values.len() != sets.omega.len() {
                    return Err(Error::Shape {
                        expected: sets.omega.len(),
                        got: values.len(),
                    });
                }
                values.clone()
            }
            PotentialProfile::File { path } => {
                return Err(Error::Config(format!(
                    "potential file '{path}' was not loaded"
                )))
            }
            other => sets
                .omega
                .iter()
                .map(|&j| other.eval(m.grid().node(j)).expect("analytic profile"))
                .collect(),
        };
        Potential::new(values, self.regularity())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumProfile {
    /// Bump centred in `center` with half-width `width`; defaults to the
    /// first W1 interval.
    Bump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        center: Option<f64>,
        #[serde(default)]
        width: Option<f64>,
    },
    /// `amplitude · sin(mode·π(x − a)/(b − a))` on the W1 hull `(a, b)`.
    Sine {
        mode: u32,
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Values on the W1 nodes, in node order.
    Samples { values: Vec<f64> },
    /// Samples read from a CSV file (last column, W1 node order).
    File { path: String },
}

fn one() -> f64 {
    1.0
}

impl Default for DatumProfile {
    fn default() -> Self {
        DatumProfile::Bump {
            amplitude: 1.0,
            center: None,
            width: None,
        }
    }
}

impl DatumProfile {
    /// Analytic form on the whole line (before restriction to W1 nodes).
    pub fn function(&self, sets: &IndexSets) -> Option<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        let (a0, b0) = sets.w1_region.intervals[0];
        let (ha, hb) = sets.w1_region.hull();
        match *self {
            DatumProfile::Bump {
                amplitude,
                center,
                width,
            } => {
                let c = center.unwrap_or(0.5 * (a0 + b0));
                let w = width.unwrap_or(0.5 * (b0 - a0));
                Some(Box::new(move |x| amplitude * bump(x, c, w)))
            }
            DatumProfile::Sine { mode, amplitude } => {
                let k = mode as f64 * std::f64::consts::PI / (hb - ha);
                Some(Box::new(move |x| {
                    if x > ha && x < hb {
                        amplitude * (k * (x - ha)).sin()
                    } else {
                        0.0
                    }
                }))
            }
            DatumProfile::Samples { .. } | DatumProfile::File { .. } => None,
        }
    }

    pub fn sample(&self, m: &SobolevMachinery, sets: &IndexSets) -> Result<GridFunction> {
        let f = match self {
            DatumProfile::Samples { values } => GridFunction::scatter(m.grid(), &sets.w1, values)?,
            DatumProfile::File { path } => {
                return Err(Error::Config(format!("datum file '{path}' was not loaded")))
            }
            other => {
                let func = other.function(sets).expect("analytic datum");
                GridFunction::from_fn(m.grid(), func).restricted(sets, Support::W1)
            }
        };
        Ok(f.with_support(Support::W1))
    }
}
