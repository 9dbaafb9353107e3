//! Discrimination, calibration and clinical-utility metrics.

use serde::{Deserialize, Serialize};

use super::glm::{fit_logistic, Design};
use crate::error::{Error, Result};

/// Predictions are clamped to `[PRED_EPS, 1 - PRED_EPS]` before logs and logits.
pub const PRED_EPS: f64 = 1e-12;

fn clamp_pred(p: f64) -> f64 {
    p.clamp(PRED_EPS, 1.0 - PRED_EPS)
}

fn check_lengths(pred: &[f64], outcome: &[bool]) -> Result<()> {
    if pred.len() != outcome.len() {
        return Err(Error::DimensionMismatch {
            what: "outcome vector",
            expected: pred.len(),
            found: outcome.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("prediction vector"));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counted as one half.
pub fn auroc(pred: &[f64], outcome: &[bool]) -> Result<f64> {
    check_lengths(pred, outcome)?;
    let n_pos = outcome.iter().filter(|o| **o).count();
    let n_neg = outcome.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(outcome.len()));
    }
    let mut idx: Vec<usize> = (0..pred.len()).collect();
    idx.sort_by(|&i, &j| pred[i].total_cmp(&pred[j]));
    // Mann-Whitney with mid-ranks over tie blocks
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && pred[idx[end]] == pred[idx[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += mid_rank * idx[start..end].iter().filter(|&&i| outcome[i]).count() as f64;
        start = end;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Coefficient of `logit(pred)` in a logistic fit with free intercept.
    pub slope: f64,
    /// Intercept with `logit(pred)` as a fixed offset (calibration in the large).
    pub intercept: f64,
    /// Intercept of the free-slope fit.
    pub intercept_joint: f64,
    /// Observed events over expected events.
    pub oe_ratio: f64,
}

pub fn calibration(pred: &[f64], outcome: &[bool]) -> Result<Calibration> {
    check_lengths(pred, outcome)?;
    let lp: Vec<f64> = pred
        .iter()
        .map(|p| {
            let p = clamp_pred(*p);
            (p / (1.0 - p)).ln()
        })
        .collect();
    // a constant predictor has no slope; the other quantities remain defined
    let (slope, intercept_joint) = if lp.iter().all(|v| *v == lp[0]) {
        (f64::NAN, f64::NAN)
    } else {
        let design = Design::new(vec!["logit_pred".into()], lp.iter().map(|v| vec![*v]))?;
        let joint = fit_logistic(&design, outcome, None)?;
        (joint.coefficients[1], joint.coefficients[0])
    };
    let offset = fit_logistic(&Design::intercept_only(pred.len()), outcome, Some(&lp))?;
    let observed = outcome.iter().filter(|o| **o).count() as f64;
    let expected: f64 = pred.iter().sum();
    Ok(Calibration {
        slope,
        intercept: offset.coefficients[0],
        intercept_joint,
        oe_ratio: observed / expected,
    })
}

/// `(brier, logistic_error)`: mean squared error and mean negative log-likelihood.
pub fn scalar_losses(pred: &[f64], outcome: &[bool]) -> Result<(f64, f64)> {
    check_lengths(pred, outcome)?;
    let n = pred.len() as f64;
    let (mut brier, mut logloss) = (0.0, 0.0);
    for (p, o) in pred.iter().zip(outcome) {
        let p = clamp_pred(*p);
        let y = *o as u8 as f64;
        brier += (p - y).powi(2);
        logloss -= if *o { p.ln() } else { (1.0 - p).ln() };
    }
    Ok((brier / n, logloss / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub bin: usize,
    pub mean_pred: f64,
    pub observed: f64,
    pub count: usize,
}

/// Equal-frequency bins by predicted risk; ties keep input order. Bin sizes
/// differ by at most one.
pub fn decile_calibration(
    pred: &[f64],
    outcome: &[bool],
    bins: usize,
) -> Result<Vec<CalibrationBin>> {
    check_lengths(pred, outcome)?;
    let n = pred.len();
    if bins == 0 || n < bins {
        return Err(Error::Config(format!(
            "need at least {bins} predictions for {bins} bins, got {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| pred[i].total_cmp(&pred[j]));
    Ok((0..bins)
        .map(|b| {
            let members = &idx[b * n / bins..(b + 1) * n / bins];
            let count = members.len();
            CalibrationBin {
                bin: b + 1,
                mean_pred: members.iter().map(|&i| pred[i]).sum::<f64>() / count as f64,
                observed: members.iter().filter(|&&i| outcome[i]).count() as f64 / count as f64,
                count,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetBenefitPoint {
    pub threshold: f64,
    pub model: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Thresholds 0.05, 0.06, ..., 0.30.
pub fn default_thresholds() -> Vec<f64> {
    (5..=30).map(|k| k as f64 / 100.0).collect()
}

/// Net benefit `TP/N - FP/N * pt / (1 - pt)`, treating whenever `pred >= pt`.
pub fn net_benefit(
    pred: &[f64],
    outcome: &[bool],
    thresholds: &[f64],
) -> Result<Vec<NetBenefitPoint>> {
    check_lengths(pred, outcome)?;
    let n = pred.len() as f64;
    let prevalence = outcome.iter().filter(|o| **o).count() as f64 / n;
    thresholds
        .iter()
        .map(|&pt| {
            if !(pt > 0.0 && pt < 1.0) {
                return Err(Error::InvalidParameter {
                    name: "threshold".into(),
                    value: pt,
                    reason: "must lie strictly inside (0, 1)",
                });
            }
            let odds = pt / (1.0 - pt);
            let (mut tp, mut fp) = (0.0, 0.0);
            for (p, o) in pred.iter().zip(outcome) {
                if *p >= pt {
                    if *o {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            Ok(NetBenefitPoint {
                threshold: pt,
                model: tp / n - fp / n * odds,
                treat_all: prevalence - (1.0 - prevalence) * odds,
                treat_none: 0.0,
            })
        })
        .collect()
}

/// Scalar summary metrics, the quantities averaged across replications and
/// corrected for optimism.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub auroc: f64,
    pub calibration_slope: f64,
    pub calibration_intercept: f64,
    pub calibration_intercept_joint: f64,
    pub oe_ratio: f64,
    pub brier: f64,
    pub logistic_error: f64,
}

impl ScalarMetrics {
    pub const NAMES: [&'static str; 7] = [
        "auroc",
        "calibration_slope",
        "calibration_intercept",
        "calibration_intercept_joint",
        "oe_ratio",
        "brier",
        "logistic_error",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.auroc,
            self.calibration_slope,
            self.calibration_intercept,
            self.calibration_intercept_joint,
            self.oe_ratio,
            self.brier,
            self.logistic_error,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Self {
        Self {
            auroc: v[0],
            calibration_slope: v[1],
            calibration_intercept: v[2],
            calibration_intercept_joint: v[3],
            oe_ratio: v[4],
            brier: v[5],
            logistic_error: v[6],
        }
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let (a, b) = (self.values(), other.values());
        Self::from_values(std::array::from_fn(|i| f(a[i], b[i])))
    }
}

/// Subset of a cohort for stratified evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    /// `(attribute index, level)`; `None` selects everyone.
    pub attribute: Option<(usize, f64)>,
}

impl Stratum {
    pub fn overall() -> Self {
        Self {
            label: "overall".into(),
            attribute: None,
        }
    }

    /// Individuals with attribute `index` (0-based) equal to `level`.
    pub fn attribute(index: usize, level: f64) -> Self {
        Self {
            label: format!("a{}={}", index + 1, level),
            attribute: Some((index, level)),
        }
    }

    /// Overall plus both levels of every binary attribute.
    pub fn standard(n_attributes: usize) -> Vec<Self> {
        std::iter::once(Self::overall())
            .chain(
                (0..n_attributes).flat_map(|j| [Self::attribute(j, 0.0), Self::attribute(j, 1.0)]),
            )
            .collect()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        self.attribute.is_none_or(|(j, v)| a.get(j) == Some(&v))
    }
}

impl std::str::FromStr for Stratum {
    type Err = Error;

    /// `overall` or `a<j>=<level>` with a 1-based attribute index.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "overall" {
            return Ok(Self::overall());
        }
        let bad = || {
            Error::Config(format!(
                "stratum '{s}' is neither 'overall' nor 'a<j>=<level>'"
            ))
        };
        let (name, level) = s.split_once('=').ok_or_else(bad)?;
        let j: usize = name
            .trim()
            .strip_prefix('a')
            .and_then(|d| d.parse().ok())
            .filter(|j| *j >= 1)
            .ok_or_else(bad)?;
        let level: f64 = level.trim().parse().map_err(|_| bad())?;
        Ok(Self::attribute(j - 1, level))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub stratum: String,
    pub n: usize,
    pub n_events: usize,
    pub metrics: ScalarMetrics,
    pub deciles: Vec<CalibrationBin>,
    pub net_benefit: Vec<NetBenefitPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationOptions {
    pub bins: usize,
    pub thresholds: Vec<f64>,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        Self {
            bins: 10,
            thresholds: default_thresholds(),
        }
    }
}

pub fn evaluate(
    label: &str,
    pred: &[f64],
    outcome: &[bool],
    opts: &EvaluationOptions,
) -> Result<MetricsReport> {
    let cal = calibration(pred, outcome)?;
    let (brier, logistic_error) = scalar_losses(pred, outcome)?;
    Ok(MetricsReport {
        stratum: label.to_string(),
        n: pred.len(),
        n_events: outcome.iter().filter(|o| **o).count(),
        metrics: ScalarMetrics {
            auroc: auroc(pred, outcome)?,
            calibration_slope: cal.slope,
            calibration_intercept: cal.intercept,
            calibration_intercept_joint: cal.intercept_joint,
            oe_ratio: cal.oe_ratio,
            brier,
            logistic_error,
        },
        deciles: decile_calibration(pred, outcome, opts.bins)?,
        net_benefit: net_benefit(pred, outcome, &opts.thresholds)?,
    })
}

/// One report per stratum; `attributes[i]` is individual `i`'s attribute vector.
pub fn evaluate_strata(
    pred: &[f64],
    outcome: &[bool],
    attributes: &[&[f64]],
    strata: &[Stratum],
    opts: &EvaluationOptions,
) -> Result<Vec<MetricsReport>> {
    check_lengths(pred, outcome)?;
    strata
        .iter()
        .map(|s| {
            let members: Vec<usize> = (0..pred.len())
                .filter(|&i| s.contains(attributes[i]))
                .collect();
            let p: Vec<f64> = members.iter().map(|&i| pred[i]).collect();
            let o: Vec<bool> = members.iter().map(|&i| outcome[i]).collect();
            evaluate(&s.label, &p, &o, opts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stratum_labels_parse() {
        assert_eq!("overall".parse::<Stratum>().unwrap(), Stratum::overall());
        let s: Stratum = "a3=1".parse().unwrap();
        assert_eq!(s, Stratum::attribute(2, 1.0));
        assert_eq!(s.label, "a3=1");
        for bad in ["a0=1", "b1=0", "a1", "a1=x"] {
            assert!(bad.parse::<Stratum>().is_err(), "{bad}");
        }
    }

    fn pair_count(pred: &[f64], y: &[bool]) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for i in 0..pred.len() {
            for j in 0..pred.len() {
                if y[i] && !y[j] {
                    n += 1.0;
                    s += if pred[i] > pred[j] {
                        1.0
                    } else if pred[i] == pred[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / n
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.2, 0.4, 0.6], &[false, true, false]).unwrap(), 0.5);
        assert_eq!(
            auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert!(matches!(
            auroc(&[0.1, 0.2], &[true, true]),
            Err(Error::SingleClass(2))
        ));
    }

    #[test]
    fn calibration_of_constant_half() {
        let y: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let cal = calibration(&[0.5; 100], &y).unwrap();
        assert_eq!(cal.oe_ratio, 1.0);
        assert!(cal.intercept.abs() < 1e-12);
        assert!(cal.slope.is_nan());
    }

    #[test]
    fn self_consistent_outcomes_are_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let pred: Vec<f64> = (0..n).map(|_| 0.02 + 0.4 * rng.random::<f64>()).collect();
        let y: Vec<bool> = pred.iter().map(|p| rng.random::<f64>() < *p).collect();
        let cal = calibration(&pred, &y).unwrap();
        let exp: f64 = pred.iter().sum();
        let se_oe = exp.sqrt() / exp;
        assert!((cal.oe_ratio - 1.0).abs() < 3.0 * se_oe, "{cal:?}");
        assert!((cal.slope - 1.0).abs() < 0.05, "{cal:?}");
        assert!(cal.intercept.abs() < 0.03, "{cal:?}");
    }

    #[test]
    fn losses_of_trivial_predictors() {
        let y = [true, false, true, false];
        let (b, l) = scalar_losses(&[0.5; 4], &y).unwrap();
        assert!((b - 0.25).abs() < 1e-15 && (l - 2f64.ln()).abs() < 1e-15);
        let (b, l) = scalar_losses(&[1.0, 0.0, 1.0, 0.0], &y).unwrap();
        assert!(b < 1e-20 && l <= 1e-11);
    }

    #[test]
    fn decile_bins() {
        let pred: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let y: Vec<bool> = (0..20).map(|i| i % 2 == 0).collect();
        let bins = decile_calibration(&pred, &y, 10).unwrap();
        assert!(bins.iter().all(|b| b.count == 2));
        // constant groups at their empirical rate lie on the diagonal
        let pred: Vec<f64> = (0..100).map(|i| if i < 50 { 0.2 } else { 0.6 }).collect();
        let y: Vec<bool> = (0..100)
            .map(|i| if i < 50 { i % 5 == 0 } else { i % 5 < 3 })
            .collect();
        for b in decile_calibration(&pred, &y, 2).unwrap() {
            assert!((b.mean_pred - b.observed).abs() < 1e-12);
        }
    }

    #[test]
    fn net_benefit_references() {
        let y = [true, false, false, true, false];
        let nb = net_benefit(&[1.0, 0.0, 0.0, 1.0, 0.0], &y, &default_thresholds()).unwrap();
        for p in &nb {
            assert_eq!(p.treat_none, 0.0);
            assert!((p.model - 0.4).abs() < 1e-15);
            let odds = p.threshold / (1.0 - p.threshold);
            assert!((p.treat_all - (0.4 - 0.6 * odds)).abs() < 1e-15);
        }
        let prev = net_benefit(&[0.4; 5], &y, &default_thresholds()).unwrap();
        for p in &prev {
            let expect = if p.threshold <= 0.4 { p.treat_all } else { 0.0 };
            assert!((p.model - expect).abs() < 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn auroc_matches_pair_counting(pred in prop::collection::vec(0u8..12, 2..60), labels in prop::collection::vec(any::<bool>(), 60)) {
            let pred: Vec<f64> = pred.iter().map(|v| *v as f64 / 11.0).collect();
            let y = &labels[..pred.len()];
            prop_assume!(y.iter().any(|v| *v) && y.iter().any(|v| !*v));
            let a = auroc(&pred, y).unwrap();
            prop_assert_eq!(a, pair_count(&pred, y));
            let transformed: Vec<f64> = pred.iter().map(|p| (3.0 * p).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&transformed, y).unwrap(), a);
        }

        #[test]
        fn deciles_partition(n in 10usize..300, bins in 1usize..11) {
            let pred: Vec<f64> = (0..n).map(|i| ((i * 7919) % 97) as f64 / 97.0).collect();
            let y: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let table = decile_calibration(&pred, &y, bins).unwrap();
            prop_assert_eq!(table.iter().map(|b| b.count).sum::<usize>(), n);
            let (lo, hi) = table.iter().fold((usize::MAX, 0), |(l, h), b| (l.min(b.count), h.max(b.count)));
            prop_assert!(hi - lo <= 1);
        }

        #[test]
        fn treat_none_is_zero(pred in prop::collection::vec(0.0f64..1.0, 1..50), labels in prop::collection::vec(any::<bool>(), 50)) {
            let y = &labels[..pred.len()];
            for p in net_benefit(&pred, y, &default_thresholds()).unwrap() {
                prop_assert_eq!(p.treat_none, 0.0);
            }
        }
    }
}
