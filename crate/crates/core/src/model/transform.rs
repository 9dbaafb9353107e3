//! Bijection between constrained model parameters and an unconstrained vector.
//!
//! Index layout of the unconstrained vector, in order:
//!
//! | block        | Weibull / GroupRates                     | PiecewiseBaseline / LogisticShared |
//! |--------------|------------------------------------------|------------------------------------|
//! | hazard       | `alpha_1..alpha_k`, `ln scale`, `ln shape` | `alpha_1..alpha_k`, `ln baseline_1..T` |
//! | emission     | `logit stage0[0]`, `logit stage0[1]`, `logit stage1[0]`, `logit stage1[1]` | `c_0..c_m` (identity) |
//! | late rate    | one coordinate (see below)               | same                               |
//! | progression  | `logit progression`                      | same                               |
//! | late fraction| `logit baseline_late_fraction`, only when free | same                         |
//!
//! The late testing rate is `logit(late)` when unconstrained. With
//! `constraint_late_ge_early` set it is `m + (1 - m) expit(u)` where `m` is the
//! largest stage-0/1 rate over the constraint support, so the ordering holds
//! for every vector.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;

use super::{expit, logit, EmissionForm, HazardFamily, HmmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    pub theta_u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamLabel {
    HazardCoefficient(usize),
    LogScale,
    LogShape,
    LogBaseline(usize),
    LogitStage0Rate(usize),
    LogitStage1Rate(usize),
    EmissionCoefficient(usize),
    LateRate,
    LogitProgression,
    LogitLateFraction,
}

impl fmt::Display for ParamLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamLabel::HazardCoefficient(j) => write!(f, "hazard.coefficients[{j}]"),
            ParamLabel::LogScale => write!(f, "ln hazard.scale"),
            ParamLabel::LogShape => write!(f, "ln hazard.shape"),
            ParamLabel::LogBaseline(t) => write!(f, "ln hazard.baseline[{t}]"),
            ParamLabel::LogitStage0Rate(l) => write!(f, "logit emission.stage0_rates[{l}]"),
            ParamLabel::LogitStage1Rate(l) => write!(f, "logit emission.stage1_rates[{l}]"),
            ParamLabel::EmissionCoefficient(j) => write!(f, "emission.coefficients[{j}]"),
            ParamLabel::LateRate => write!(f, "u emission.late_rate"),
            ParamLabel::LogitProgression => write!(f, "logit progression"),
            ParamLabel::LogitLateFraction => write!(f, "logit baseline_late_fraction"),
        }
    }
}

/// Fixed layout for one model structure.
///
/// The template supplies the structure (families, dimensions, constraint
/// support) and the value of the late fraction when it is held fixed.
#[derive(Debug, Clone)]
pub struct Parameterization {
    template: HmmParams,
    late_fraction_free: bool,
    pub(crate) n_alpha: usize,
    pub(crate) hazard_time: Range<usize>,
    pub(crate) emission: Range<usize>,
    pub(crate) late: usize,
    pub(crate) progression: usize,
    pub(crate) late_fraction: Option<usize>,
    dim: usize,
}

impl Parameterization {
    pub fn new(template: HmmParams, late_fraction_free: bool) -> Result<Self> {
        template.validate()?;
        let n_alpha = template.hazard.coefficients.len();
        let n_time = match &template.hazard.family {
            HazardFamily::Weibull { .. } => 2,
            HazardFamily::PiecewiseBaseline { baseline } => baseline.len(),
        };
        let hazard_time = n_alpha..n_alpha + n_time;
        let n_emission = match &template.emission.form {
            EmissionForm::GroupRates { .. } => 4,
            EmissionForm::LogisticShared { coefficients } => coefficients.len(),
        };
        let emission = hazard_time.end..hazard_time.end + n_emission;
        let late = emission.end;
        let progression = late + 1;
        let late_fraction = late_fraction_free.then_some(progression + 1);
        let dim = progression + 1 + usize::from(late_fraction_free);
        Ok(Self {
            template,
            late_fraction_free,
            n_alpha,
            hazard_time,
            emission,
            late,
            progression,
            late_fraction,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn template(&self) -> &HmmParams {
        &self.template
    }

    pub fn late_fraction_free(&self) -> bool {
        self.late_fraction_free
    }

    pub fn labels(&self) -> Vec<ParamLabel> {
        let mut out: Vec<ParamLabel> = (0..self.n_alpha)
            .map(ParamLabel::HazardCoefficient)
            .collect();
        match &self.template.hazard.family {
            HazardFamily::Weibull { .. } => {
                out.push(ParamLabel::LogScale);
                out.push(ParamLabel::LogShape);
            }
            HazardFamily::PiecewiseBaseline { baseline } => {
                out.extend((0..baseline.len()).map(ParamLabel::LogBaseline));
            }
        }
        match &self.template.emission.form {
            EmissionForm::GroupRates { .. } => out.extend([
                ParamLabel::LogitStage0Rate(0),
                ParamLabel::LogitStage0Rate(1),
                ParamLabel::LogitStage1Rate(0),
                ParamLabel::LogitStage1Rate(1),
            ]),
            EmissionForm::LogisticShared { coefficients } => {
                out.extend((0..coefficients.len()).map(ParamLabel::EmissionCoefficient))
            }
        }
        out.push(ParamLabel::LateRate);
        out.push(ParamLabel::LogitProgression);
        if self.late_fraction_free {
            out.push(ParamLabel::LogitLateFraction);
        }
        out
    }

    fn structure_mismatch(what: &'static str, expected: usize, found: usize) -> Error {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }

    pub fn to_unconstrained(&self, theta: &HmmParams) -> Result<UnconstrainedParams> {
        theta.validate()?;
        let mut u = vec![0.0; self.dim];
        if theta.hazard.coefficients.len() != self.n_alpha {
            return Err(Self::structure_mismatch(
                "hazard coefficients",
                self.n_alpha,
                theta.hazard.coefficients.len(),
            ));
        }
        u[..self.n_alpha].copy_from_slice(&theta.hazard.coefficients);
        match (&theta.hazard.family, &self.template.hazard.family) {
            (HazardFamily::Weibull { scale, shape }, HazardFamily::Weibull { .. }) => {
                u[self.hazard_time.start] = scale.ln();
                u[self.hazard_time.start + 1] = shape.ln();
            }
            (
                HazardFamily::PiecewiseBaseline { baseline },
                HazardFamily::PiecewiseBaseline { .. },
            ) => {
                if baseline.len() != self.hazard_time.len() {
                    return Err(Self::structure_mismatch(
                        "hazard baseline",
                        self.hazard_time.len(),
                        baseline.len(),
                    ));
                }
                for (slot, b) in u[self.hazard_time.clone()].iter_mut().zip(baseline) {
                    *slot = b.ln();
                }
            }
            _ => {
                return Err(Error::Config(
                    "hazard family differs from parameterization".into(),
                ))
            }
        }
        match (&theta.emission.form, &self.template.emission.form) {
            (
                EmissionForm::GroupRates {
                    stage0_rates,
                    stage1_rates,
                },
                EmissionForm::GroupRates { .. },
            ) => {
                let e = self.emission.start;
                u[e] = logit(stage0_rates[0]);
                u[e + 1] = logit(stage0_rates[1]);
                u[e + 2] = logit(stage1_rates[0]);
                u[e + 3] = logit(stage1_rates[1]);
            }
            (
                EmissionForm::LogisticShared { coefficients },
                EmissionForm::LogisticShared { .. },
            ) => {
                if coefficients.len() != self.emission.len() {
                    return Err(Self::structure_mismatch(
                        "emission coefficients",
                        self.emission.len(),
                        coefficients.len(),
                    ));
                }
                u[self.emission.clone()].copy_from_slice(coefficients);
            }
            _ => {
                return Err(Error::Config(
                    "emission form differs from parameterization".into(),
                ))
            }
        }
        u[self.late] = if self.template.emission.constraint_late_ge_early {
            let mut probe = theta.emission.clone();
            probe.constraint_support = self.template.emission.constraint_support.clone();
            let (m, _) = probe.max_early_rate();
            logit((theta.emission.late_rate - m) / (1.0 - m))
        } else {
            logit(theta.emission.late_rate)
        };
        u[self.progression] = logit(theta.progression);
        if let Some(i) = self.late_fraction {
            u[i] = logit(theta.baseline_late_fraction);
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("unconstrained coordinate {} ({})", i, self.labels()[i]),
            });
        }
        Ok(UnconstrainedParams { theta_u: u })
    }

    pub fn from_unconstrained(&self, u: &UnconstrainedParams) -> Result<HmmParams> {
        self.decode(&u.theta_u)
    }

    pub(crate) fn decode(&self, u: &[f64]) -> Result<HmmParams> {
        if u.len() != self.dim {
            return Err(Self::structure_mismatch(
                "unconstrained vector",
                self.dim,
                u.len(),
            ));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("unconstrained coordinate {i}"),
            });
        }
        let mut theta = self.template.clone();
        theta
            .hazard
            .coefficients
            .copy_from_slice(&u[..self.n_alpha]);
        match &mut theta.hazard.family {
            HazardFamily::Weibull { scale, shape } => {
                *scale = u[self.hazard_time.start].exp();
                *shape = u[self.hazard_time.start + 1].exp();
            }
            HazardFamily::PiecewiseBaseline { baseline } => {
                for (b, v) in baseline.iter_mut().zip(&u[self.hazard_time.clone()]) {
                    *b = v.exp();
                }
            }
        }
        let e = self.emission.start;
        match &mut theta.emission.form {
            EmissionForm::GroupRates {
                stage0_rates,
                stage1_rates,
            } => {
                *stage0_rates = [expit(u[e]), expit(u[e + 1])];
                *stage1_rates = [expit(u[e + 2]), expit(u[e + 3])];
            }
            EmissionForm::LogisticShared { coefficients } => {
                coefficients.copy_from_slice(&u[self.emission.clone()]);
            }
        }
        theta.emission.late_rate = if theta.emission.constraint_late_ge_early {
            let (m, _) = theta.emission.max_early_rate();
            m + (1.0 - m) * expit(u[self.late])
        } else {
            expit(u[self.late])
        };
        theta.progression = expit(u[self.progression]);
        if let Some(i) = self.late_fraction {
            theta.baseline_late_fraction = expit(u[i]);
        }
        let checks = [
            theta.emission.late_rate,
            theta.progression,
            theta.baseline_late_fraction,
        ];
        if checks.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "decoded parameters".into(),
            });
        }
        Ok(theta)
    }
}
