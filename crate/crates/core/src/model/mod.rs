//! Parametric objects of the progressive-disease hidden Markov model.
//!
//! A person moves through three latent stages (none, early, late) and at each
//! discrete timepoint either receives a confirmatory test or not. The three
//! ingredients are the transition kernel (driven by an incidence hazard and a
//! shared early-to-late progression rate), the emission matrix (testing rates
//! per stage and observability attributes) and the initial stage distribution.

mod emission;
mod hazard;
mod transform;

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

pub use emission::{EmissionForm, EmissionModel};
pub use hazard::{HazardFamily, HazardModel, HAZARD_EPS};
pub use transform::{ParamLabel, Parameterization, UnconstrainedParams};

/// Latent disease stage. Progression only moves forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum DiseaseStage {
    None = 0,
    Early = 1,
    Late = 2,
}

impl DiseaseStage {
    pub const ALL: [DiseaseStage; 3] =
        [DiseaseStage::None, DiseaseStage::Early, DiseaseStage::Late];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DiseaseStage::None),
            1 => Some(DiseaseStage::Early),
            2 => Some(DiseaseStage::Late),
            _ => None,
        }
    }
}

/// Observation at one timepoint: a confirmatory test result or no test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TestResult {
    Negative = 0,
    EarlyPositive = 1,
    LatePositive = 2,
    NoTest = 3,
}

impl TestResult {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TestResult::Negative),
            1 => Some(TestResult::EarlyPositive),
            2 => Some(TestResult::LatePositive),
            3 => Some(TestResult::NoTest),
            _ => None,
        }
    }

    /// A positive result diagnoses the individual and ends follow-up.
    pub fn is_positive(self) -> bool {
        matches!(self, TestResult::EarlyPositive | TestResult::LatePositive)
    }
}

impl fmt::Display for TestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One person's covariates and test history.
///
/// `x` holds risk-only covariates, `a` the observability attributes. The
/// follow-up length is `results.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub id: u64,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    pub results: Vec<TestResult>,
    pub diagnosed: bool,
}

impl IndividualRecord {
    /// Builds a record, deriving `diagnosed` from the final result.
    pub fn new(id: u64, x: Vec<f64>, a: Vec<f64>, results: Vec<TestResult>) -> Self {
        let diagnosed = results.last().is_some_and(|r| r.is_positive());
        Self {
            id,
            x,
            a,
            results,
            diagnosed,
        }
    }

    pub fn follow_up(&self) -> usize {
        self.results.len()
    }

    /// Checks censoring-at-first-positive against the study horizon.
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            id: self.id,
            reason,
        };
        let n = self.results.len();
        if n == 0 {
            return Err(bad("empty test history".into()));
        }
        if n > horizon {
            return Err(bad(format!("follow-up {n} exceeds horizon {horizon}")));
        }
        if let Some(t) = self.results[..n - 1].iter().position(|r| r.is_positive()) {
            return Err(bad(format!(
                "positive result at t={} before end of follow-up",
                t + 1
            )));
        }
        let last_positive = self.results[n - 1].is_positive();
        if self.diagnosed != last_positive {
            return Err(bad("diagnosed flag disagrees with final result".into()));
        }
        if !self.diagnosed && n != horizon {
            return Err(bad(format!(
                "undiagnosed record followed for {n} of {horizon} timepoints"
            )));
        }
        if self.x.iter().chain(&self.a).any(|v| !v.is_finite()) {
            return Err(bad("non-finite covariate".into()));
        }
        Ok(())
    }
}

/// Full parameter set of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmParams {
    pub hazard: HazardModel,
    pub emission: EmissionModel,
    /// Shared per-timepoint early-to-late progression probability.
    pub progression: f64,
    /// Probability of late stage among those diseased at the first timepoint.
    pub baseline_late_fraction: f64,
}

pub type TransitionMatrix = [[f64; 3]; 3];
pub type EmissionMatrix = [[f64; 4]; 3];

impl HmmParams {
    pub fn horizon(&self) -> usize {
        self.hazard.horizon
    }

    pub fn validate(&self) -> Result<()> {
        self.hazard.validate()?;
        self.emission.validate()?;
        open_unit("progression", self.progression)?;
        let f = self.baseline_late_fraction;
        if !(f.is_finite() && (0.0..1.0).contains(&f)) {
            return Err(Error::InvalidParameter {
                name: "baseline_late_fraction".into(),
                value: f,
                reason: "must lie in [0, 1)",
            });
        }
        Ok(())
    }

    pub fn hazard(&self, x: &[f64], a: &[f64], t: usize) -> Result<f64> {
        self.hazard.evaluate(x, a, t)
    }

    /// Every parameter on its natural scale with a stable name, in a fixed
    /// order: hazard, emission, progression, late fraction.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        match &self.hazard.family {
            HazardFamily::Weibull { scale, shape } => {
                out.push(("hazard.scale".to_string(), *scale));
                out.push(("hazard.shape".to_string(), *shape));
            }
            HazardFamily::PiecewiseBaseline { baseline } => {
                out.extend(
                    baseline
                        .iter()
                        .enumerate()
                        .map(|(t, b)| (format!("hazard.baseline[{}]", t + 1), *b)),
                );
            }
        }
        out.extend(
            self.hazard
                .coefficients
                .iter()
                .enumerate()
                .map(|(j, c)| (format!("hazard.coefficients[{j}]"), *c)),
        );
        match &self.emission.form {
            EmissionForm::GroupRates {
                stage0_rates,
                stage1_rates,
            } => {
                for (stage, rates) in [(0, stage0_rates), (1, stage1_rates)] {
                    out.extend(
                        rates
                            .iter()
                            .enumerate()
                            .map(|(l, r)| (format!("emission.stage{stage}_rates[{l}]"), *r)),
                    );
                }
            }
            EmissionForm::LogisticShared { coefficients } => {
                out.extend(
                    coefficients
                        .iter()
                        .enumerate()
                        .map(|(j, c)| (format!("emission.coefficients[{j}]"), *c)),
                );
            }
        }
        out.push(("emission.late_rate".to_string(), self.emission.late_rate));
        out.push(("progression".to_string(), self.progression));
        out.push((
            "baseline_late_fraction".to_string(),
            self.baseline_late_fraction,
        ));
        out
    }

    /// Transition kernel from timepoint t-1 to t.
    pub fn transition_matrix(&self, x: &[f64], a: &[f64], t: usize) -> Result<TransitionMatrix> {
        let h = self.hazard(x, a, t)?;
        Ok(transition_from(h, self.progression))
    }

    pub fn emission_matrix(&self, a: &[f64]) -> Result<EmissionMatrix> {
        let rates = self.emission.stage_rates(a)?;
        Ok(emission_from(rates))
    }

    pub fn initial_state(&self, x: &[f64], a: &[f64]) -> Result<[f64; 3]> {
        let h1 = self.hazard(x, a, 1)?;
        Ok(initial_from(h1, self.baseline_late_fraction))
    }
}

pub(crate) fn open_unit(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.to_string(),
            value,
            reason: "must lie strictly inside (0, 1)",
        })
    }
}

pub(crate) fn transition_from(h: f64, progression: f64) -> TransitionMatrix {
    [
        [1.0 - h, h, 0.0],
        [0.0, 1.0 - progression, progression],
        [0.0, 0.0, 1.0],
    ]
}

/// Emission matrix from the per-stage testing rates. Tests are perfect, so a
/// stage can only emit its own confirmatory result or "no test".
pub(crate) fn emission_from(rates: [f64; 3]) -> EmissionMatrix {
    let mut g = [[0.0; 4]; 3];
    for (i, &rate) in rates.iter().enumerate() {
        g[i][i] = rate;
        g[i][3] = 1.0 - rate;
    }
    g
}

pub(crate) fn initial_from(h1: f64, late_fraction: f64) -> [f64; 3] {
    [1.0 - h1, (1.0 - late_fraction) * h1, late_fraction * h1]
}

/// Probability that a stage emits `result` given the stage testing rates.
#[inline]
pub(crate) fn emission_prob(rates: &[f64; 3], stage: usize, result: TestResult) -> f64 {
    match result {
        TestResult::NoTest => 1.0 - rates[stage],
        r if r.index() == stage => rates[stage],
        _ => 0.0,
    }
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_params, scenario1_truth};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transition_pattern() {
        let q = transition_from(0.3, 0.1);
        assert_eq!(q, [[0.7, 0.3, 0.0], [0.0, 0.9, 0.1], [0.0, 0.0, 1.0]]);
        assert_eq!(transition_from(0.0, 0.1)[0], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn scenario1_emission_matrix_for_reference_group() {
        let theta = scenario1_truth();
        let g = theta.emission_matrix(&[0.0]).unwrap();
        assert_eq!(
            g,
            [
                [0.025, 0.0, 0.0, 0.975],
                [0.0, 0.1, 0.0, 0.9],
                [0.0, 0.0, 0.3, 0.7]
            ]
        );
    }

    #[test]
    fn logistic_emission_at_zero_is_half() {
        let em = EmissionModel::logistic_shared(vec![0.0, 0.0, 0.0], 0.7, false);
        let rates = em.stage_rates(&[1.0, 0.0]).unwrap();
        assert_eq!(rates[0], 0.5);
        assert_eq!(rates[1], 0.5);
        assert_eq!(rates[2], 0.7);
    }

    #[test]
    fn initial_state_examples() {
        assert_eq!(initial_from(0.0075, 0.0), [0.9925, 0.0075, 0.0]);
        let p = initial_from(0.02, 0.289);
        assert!((p[0] - 0.98).abs() < 1e-15);
        assert!((p[1] - 0.01422).abs() < 1e-15);
        assert!((p[2] - 0.00578).abs() < 1e-15);
    }

    #[test]
    fn record_validation() {
        use TestResult::*;
        let ok = IndividualRecord::new(1, vec![], vec![0.0], vec![Negative, NoTest, EarlyPositive]);
        assert!(ok.diagnosed);
        ok.validate(10).unwrap();
        let early_stop = IndividualRecord::new(2, vec![], vec![0.0], vec![NoTest, NoTest]);
        assert!(early_stop.validate(10).is_err());
        let mut inner = IndividualRecord::new(3, vec![], vec![0.0], vec![LatePositive, NoTest]);
        inner.diagnosed = false;
        assert!(inner.validate(2).is_err());
        assert!(IndividualRecord::new(4, vec![], vec![], vec![])
            .validate(3)
            .is_err());
    }

    #[test]
    fn stochastic_and_zero_patterns_on_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let theta = random_params(&mut rng, 2, 1);
            let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let a = [f64::from(rng.random_range(0..2u8))];
            let t = rng.random_range(1..=theta.horizon());
            let q = theta.transition_matrix(&x, &a, t).unwrap();
            for row in &q {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            assert_eq!((q[1][0], q[2][0], q[2][1]), (0.0, 0.0, 0.0));
            let g = theta.emission_matrix(&a).unwrap();
            for (i, row) in g.iter().enumerate() {
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..3 {
                    if j != i {
                        assert_eq!(row[j], 0.0);
                    }
                }
            }
            let p = theta.initial_state(&x, &a).unwrap();
            assert!(p.iter().all(|&v| v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn hazard_monotone_in_positive_coefficient_covariates(
            x1 in -3.0f64..3.0, bump in 0.0f64..2.0, coef in 0.0f64..1.0, t in 1usize..=10,
        ) {
            let mut theta = scenario1_truth();
            theta.hazard.coefficients = vec![coef, -0.25, 0.25];
            let lo = theta.hazard.raw(&[x1, 0.5], &[0.0], t).unwrap();
            let hi = theta.hazard.raw(&[x1 + bump, 0.5], &[0.0], t).unwrap();
            prop_assert!(hi >= lo);
        }
    }
}
