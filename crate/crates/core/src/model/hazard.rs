use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper clamp margin: a hazard never exceeds `1 - HAZARD_EPS`.
pub const HAZARD_EPS: f64 = 1e-6;

/// Time dependence of the incidence hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum HazardFamily {
    /// `scale * shape * (t / T)^(shape - 1)`
    Weibull { scale: f64, shape: f64 },
    /// One base hazard per timepoint, `baseline[t - 1]` at timepoint `t`.
    PiecewiseBaseline { baseline: Vec<f64> },
}

/// Discrete-time proportional hazard over the joint covariate vector `(x, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    #[serde(flatten)]
    pub family: HazardFamily,
    /// Log-hazard coefficients over `x` followed by `a`.
    pub coefficients: Vec<f64>,
    /// Study horizon `T` used to scale time.
    pub horizon: usize,
}

impl HazardModel {
    pub fn weibull(scale: f64, shape: f64, coefficients: Vec<f64>, horizon: usize) -> Self {
        Self {
            family: HazardFamily::Weibull { scale, shape },
            coefficients,
            horizon,
        }
    }

    pub fn piecewise(baseline: Vec<f64>, coefficients: Vec<f64>) -> Self {
        let horizon = baseline.len();
        Self {
            family: HazardFamily::PiecewiseBaseline { baseline },
            coefficients,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name: name.to_string(),
                    value: v,
                    reason: "must be positive and finite",
                })
            }
        };
        if self.horizon == 0 {
            return Err(Error::Config("hazard horizon must be at least 1".into()));
        }
        match &self.family {
            HazardFamily::Weibull { scale, shape } => {
                positive("hazard.scale", *scale)?;
                positive("hazard.shape", *shape)?;
            }
            HazardFamily::PiecewiseBaseline { baseline } => {
                if baseline.len() != self.horizon {
                    return Err(Error::DimensionMismatch {
                        what: "hazard baseline",
                        expected: self.horizon,
                        found: baseline.len(),
                    });
                }
                for (t, b) in baseline.iter().enumerate() {
                    positive(&format!("hazard.baseline[{t}]"), *b)?;
                }
            }
        }
        if let Some(c) = self.coefficients.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "hazard.coefficients".into(),
                value: *c,
                reason: "must be finite",
            });
        }
        Ok(())
    }

    /// Linear predictor `alpha' (x, a)`.
    pub fn linear_predictor(&self, x: &[f64], a: &[f64]) -> Result<f64> {
        let expected = self.coefficients.len();
        if x.len() + a.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "hazard covariates (x, a)",
                expected,
                found: x.len() + a.len(),
            });
        }
        Ok(self
            .coefficients
            .iter()
            .zip(x.iter().chain(a))
            .map(|(c, v)| c * v)
            .sum())
    }

    /// Time-only factor of the hazard at timepoint `t`.
    ///
    /// Piecewise baselines beyond their last entry reuse the final value.
    pub fn time_factor(&self, t: usize) -> f64 {
        match &self.family {
            HazardFamily::Weibull { scale, shape } => {
                let tau = t as f64 / self.horizon as f64;
                scale * shape * tau.powf(shape - 1.0)
            }
            HazardFamily::PiecewiseBaseline { baseline } => {
                baseline[(t - 1).min(baseline.len() - 1)]
            }
        }
    }

    /// Unclamped hazard.
    pub fn raw(&self, x: &[f64], a: &[f64], t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let eta = self.linear_predictor(x, a)?;
        Ok(self.time_factor(t) * eta.exp())
    }

    /// Hazard clamped into `[0, 1 - HAZARD_EPS]`.
    pub fn evaluate(&self, x: &[f64], a: &[f64], t: usize) -> Result<f64> {
        if t == 0 || t > self.horizon {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        Ok(clamp_hazard(self.raw(x, a, t)?))
    }

    /// Clamped hazards for t = 1..=len, given a precomputed `exp(eta)`.
    pub(crate) fn sequence(&self, exp_eta: f64, len: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((1..=len).map(|t| clamp_hazard(self.time_factor(t) * exp_eta)));
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficients.len()
    }
}

#[inline]
pub(crate) fn clamp_hazard(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0 - HAZARD_EPS)
}
