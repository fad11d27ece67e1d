use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Spectral,
    Tikhonov,
    MinimalL2,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Spectral => "spectral",
            Scheme::Tikhonov => "tikhonov",
            Scheme::MinimalL2 => "minimal_l2",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Scheme::Spectral),
            "tikhonov" => Ok(Scheme::Tikhonov),
            "minimal_l2" | "minimal-l2" => Ok(Scheme::MinimalL2),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Regularization parameters to sweep, largest first.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSchedule {
    /// Geometric schedule resolved from the operator and data.
    Auto,
    List(Vec<f64>),
}

/// Number of half-decades in the automatic schedule; the last point sits at
/// the numerical rank cutoff `1e-12 σ₁`.
pub const AUTO_STEPS: usize = 24;

impl AlphaSchedule {
    /// Concrete values for `scheme`; `sigma_max` is the leading singular value
    /// of `L` and `data_norm` the dual norm of the datum.
    pub fn resolve(&self, scheme: Scheme, sigma_max: f64, data_norm: f64) -> Vec<f64> {
        match self {
            AlphaSchedule::List(v) => v.clone(),
            AlphaSchedule::Auto => (0..=AUTO_STEPS)
                .map(|k| {
                    let decay = 10f64.powf(-(k as f64) / 2.0);
                    match scheme {
                        Scheme::Spectral => sigma_max * decay,
                        // the penalty weight compares with σ², not σ
                        Scheme::Tikhonov => (sigma_max * decay).powi(2),
                        // the residual certificate is measured in the data norm
                        Scheme::MinimalL2 => data_norm * decay,
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run the whole schedule and return the last iterate.
    FixedList,
    /// Stop at the first iterate whose residual is at most
    /// `factor * noise_norm`.
    Discrepancy { noise_norm: f64, factor: f64 },
}

/// Safety factor of the discrepancy principle.
pub const DISCREPANCY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerConfig {
    pub scheme: Scheme,
    pub alpha_schedule: AlphaSchedule,
    pub stop_rule: StopRule,
    pub inner_solver_tol: f64,
}

impl RegularizerConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            alpha_schedule: AlphaSchedule::Auto,
            stop_rule: StopRule::FixedList,
            inner_solver_tol: 1e-10,
        }
    }

    pub fn with_schedule(mut self, alphas: Vec<f64>) -> Self {
        self.alpha_schedule = AlphaSchedule::List(alphas);
        self
    }

    pub fn with_stop_rule(mut self, rule: StopRule) -> Self {
        self.stop_rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let AlphaSchedule::List(v) = &self.alpha_schedule {
            if v.is_empty() {
                return Err(Error::Config("alpha schedule is empty".into()));
            }
            if v.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::Config("alpha values must be positive".into()));
            }
            if v.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::Config(
                    "alpha schedule must be strictly decreasing".into(),
                ));
            }
        }
        if !(self.inner_solver_tol > 0.0 && self.inner_solver_tol < 1.0) {
            return Err(Error::Config(
                "inner solver tolerance must lie in (0, 1)".into(),
            ));
        }
        if let StopRule::Discrepancy { noise_norm, factor } = self.stop_rule {
            if !(noise_norm >= 0.0 && factor >= 1.0) {
                return Err(Error::Config("invalid discrepancy parameters".into()));
            }
        }
        Ok(())
    }
}
