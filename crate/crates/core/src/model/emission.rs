use serde::{Deserialize, Serialize};

use super::{expit, open_unit};
use crate::error::{Error, Result};

/// How the stage-0 and stage-1 testing rates depend on the observability attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form")]
pub enum EmissionForm {
    /// One binary attribute; separate rates per stage and attribute level.
    /// Index 0 is the level `a = 0`, index 1 the level `a = 1`.
    GroupRates {
        stage0_rates: [f64; 2],
        stage1_rates: [f64; 2],
    },
    /// `b(a) = expit(c0 + c' a)` shared by stages 0 and 1.
    LogisticShared { coefficients: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionModel {
    #[serde(flatten)]
    pub form: EmissionForm,
    /// Testing rate in late-stage disease, independent of attributes.
    pub late_rate: f64,
    pub constraint_late_ge_early: bool,
    /// Attribute vectors over which the late >= early constraint is taken.
    /// Empty means every binary attribute vector.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraint_support: Vec<Vec<f64>>,
}

impl EmissionModel {
    pub fn group_rates(stage0: [f64; 2], stage1: [f64; 2], late: f64, constrained: bool) -> Self {
        Self {
            form: EmissionForm::GroupRates {
                stage0_rates: stage0,
                stage1_rates: stage1,
            },
            late_rate: late,
            constraint_late_ge_early: constrained,
            constraint_support: Vec::new(),
        }
    }

    pub fn logistic_shared(coefficients: Vec<f64>, late: f64, constrained: bool) -> Self {
        Self {
            form: EmissionForm::LogisticShared { coefficients },
            late_rate: late,
            constraint_late_ge_early: constrained,
            constraint_support: Vec::new(),
        }
    }

    /// Number of observability attributes this form expects.
    pub fn n_attributes(&self) -> usize {
        match &self.form {
            EmissionForm::GroupRates { .. } => 1,
            EmissionForm::LogisticShared { coefficients } => coefficients.len().saturating_sub(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.form {
            EmissionForm::GroupRates {
                stage0_rates,
                stage1_rates,
            } => {
                for (l, r) in stage0_rates.iter().enumerate() {
                    open_unit(&format!("emission.stage0_rates[{l}]"), *r)?;
                }
                for (l, r) in stage1_rates.iter().enumerate() {
                    open_unit(&format!("emission.stage1_rates[{l}]"), *r)?;
                }
            }
            EmissionForm::LogisticShared { coefficients } => {
                if coefficients.is_empty() {
                    return Err(Error::DimensionMismatch {
                        what: "emission coefficients (intercept required)",
                        expected: 1,
                        found: 0,
                    });
                }
                if let Some(c) = coefficients.iter().find(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "emission.coefficients".into(),
                        value: *c,
                        reason: "must be finite",
                    });
                }
            }
        }
        open_unit("emission.late_rate", self.late_rate)?;
        if self.constraint_late_ge_early {
            let (m, _) = self.max_early_rate();
            if self.late_rate < m {
                return Err(Error::InvalidParameter {
                    name: "emission.late_rate".into(),
                    value: self.late_rate,
                    reason: "below the maximum early-stage testing rate",
                });
            }
        }
        Ok(())
    }

    fn group_level(a: &[f64]) -> Result<usize> {
        if a.len() != 1 {
            return Err(Error::DimensionMismatch {
                what: "observability attributes a",
                expected: 1,
                found: a.len(),
            });
        }
        match a[0] {
            v if v == 0.0 => Ok(0),
            v if v == 1.0 => Ok(1),
            v => Err(Error::InvalidParameter {
                name: "a[0]".into(),
                value: v,
                reason: "group-rate emissions need a binary attribute",
            }),
        }
    }

    /// Shared stage-0/1 testing rate `b(a)` of the logistic form, or the
    /// stage-specific rates of the group form, as `[stage0, stage1, late]`.
    pub fn stage_rates(&self, a: &[f64]) -> Result<[f64; 3]> {
        match &self.form {
            EmissionForm::GroupRates {
                stage0_rates,
                stage1_rates,
            } => {
                let l = Self::group_level(a)?;
                Ok([stage0_rates[l], stage1_rates[l], self.late_rate])
            }
            EmissionForm::LogisticShared { coefficients } => {
                let b = expit(logistic_eta(coefficients, a)?);
                Ok([b, b, self.late_rate])
            }
        }
    }

    /// Largest stage-0/1 testing rate over the constraint support, with its
    /// partial derivatives with respect to the emission-block coordinates of
    /// the unconstrained vector (logits of group rates, or raw coefficients).
    pub fn max_early_rate(&self) -> (f64, Vec<(usize, f64)>) {
        match &self.form {
            EmissionForm::GroupRates {
                stage0_rates,
                stage1_rates,
            } => {
                let mut levels = [false; 2];
                if self.constraint_support.is_empty() {
                    levels = [true, true];
                } else {
                    for a in &self.constraint_support {
                        if let Ok(l) = Self::group_level(a) {
                            levels[l] = true;
                        }
                    }
                }
                // emission-block layout: stage0[0], stage0[1], stage1[0], stage1[1]
                let mut best = (0.0, usize::MAX);
                for l in 0..2 {
                    if !levels[l] {
                        continue;
                    }
                    for (offset, rates) in [(0, stage0_rates), (2, stage1_rates)] {
                        if rates[l] > best.0 {
                            best = (rates[l], offset + l);
                        }
                    }
                }
                if best.1 == usize::MAX {
                    return (0.0, Vec::new());
                }
                let m = best.0;
                (m, vec![(best.1, m * (1.0 - m))])
            }
            EmissionForm::LogisticShared { coefficients } => {
                if self.constraint_support.is_empty() {
                    let eta =
                        coefficients[0] + coefficients[1..].iter().map(|c| c.max(0.0)).sum::<f64>();
                    let m = expit(eta);
                    let d = m * (1.0 - m);
                    let mut grad = vec![(0, d)];
                    grad.extend(
                        coefficients[1..]
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| **c > 0.0)
                            .map(|(j, _)| (j + 1, d)),
                    );
                    return (m, grad);
                }
                let mut best: Option<(f64, &Vec<f64>)> = None;
                for a in &self.constraint_support {
                    if let Ok(eta) = logistic_eta(coefficients, a) {
                        if best.is_none_or(|(e, _)| eta > e) {
                            best = Some((eta, a));
                        }
                    }
                }
                match best {
                    None => (0.0, Vec::new()),
                    Some((eta, a)) => {
                        let m = expit(eta);
                        let d = m * (1.0 - m);
                        let mut grad = vec![(0, d)];
                        grad.extend(
                            a.iter()
                                .enumerate()
                                .filter(|(_, v)| **v != 0.0)
                                .map(|(j, v)| (j + 1, d * v)),
                        );
                        (m, grad)
                    }
                }
            }
        }
    }

    /// Distinct attribute vectors of a cohort, in first-seen order.
    pub fn support_from<'a>(attributes: impl IntoIterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
        let mut seen: Vec<Vec<f64>> = Vec::new();
        for a in attributes {
            if !seen.iter().any(|s| s.as_slice() == a) {
                seen.push(a.to_vec());
            }
        }
        seen
    }
}

pub(crate) fn logistic_eta(coefficients: &[f64], a: &[f64]) -> Result<f64> {
    if coefficients.len() != a.len() + 1 {
        return Err(Error::DimensionMismatch {
            what: "observability attributes a",
            expected: coefficients.len().saturating_sub(1),
            found: a.len(),
        });
    }
    Ok(coefficients[0]
        + coefficients[1..]
            .iter()
            .zip(a)
            .map(|(c, v)| c * v)
            .sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_rates_reject_wrong_layout() {
        let em = EmissionModel::group_rates([0.025, 0.01], [0.1, 0.05], 0.3, true);
        assert!(em.stage_rates(&[0.0, 1.0]).is_err());
        assert!(em.stage_rates(&[0.5]).is_err());
        assert_eq!(em.stage_rates(&[1.0]).unwrap(), [0.01, 0.05, 0.3]);
    }

    #[test]
    fn max_early_rate_over_support() {
        let mut em = EmissionModel::group_rates([0.025, 0.01], [0.1, 0.05], 0.3, true);
        assert_eq!(em.max_early_rate().0, 0.1);
        em.constraint_support = vec![vec![1.0]];
        let (m, grad) = em.max_early_rate();
        assert_eq!(m, 0.05);
        assert_eq!(grad[0].0, 3);

        let mut lg = EmissionModel::logistic_shared(vec![-2.0, 1.0, -1.0], 0.5, true);
        let (m_all, _) = lg.max_early_rate();
        assert!((m_all - expit(-1.0)).abs() < 1e-15);
        lg.constraint_support = vec![vec![0.0, 0.0], vec![0.0, 1.0]];
        let (m_data, grad) = lg.max_early_rate();
        assert!((m_data - expit(-2.0)).abs() < 1e-15);
        assert_eq!(grad.len(), 1);
    }

    #[test]
    fn constraint_violation_is_rejected() {
        let em = EmissionModel::group_rates([0.025, 0.01], [0.4, 0.05], 0.3, true);
        assert!(em.validate().is_err());
        let free = EmissionModel::group_rates([0.025, 0.01], [0.4, 0.05], 0.3, false);
        free.validate().unwrap();
    }
}
