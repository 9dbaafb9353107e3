//! Cohort generators for the validation scenarios.
//!
//! Each individual draws observability attributes, then `x1 | a1` and `x2`,
//! then four uniforms per timepoint: incidence or progression, late split at
//! onset, whether a test happens, and whether a test detects disease. The
//! stage moves first and the test applies to the new stage. With a shared
//! seed the factual and counterfactual worlds therefore see the same latent
//! path and nested testing events.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    DiseaseStage, EmissionModel, HazardModel, HmmParams, IndividualRecord, TestResult,
};
use crate::seed::individual_rng;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalLaw {
    pub mean: f64,
    pub sd: f64,
}

/// Law of the two risk covariates; `x1` depends on the first attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateLaw {
    pub x1_given_a0: NormalLaw,
    pub x1_given_a1: NormalLaw,
    pub x2: NormalLaw,
}

impl Default for CovariateLaw {
    fn default() -> Self {
        Self {
            x1_given_a0: NormalLaw { mean: 0.0, sd: 1.0 },
            x1_given_a1: NormalLaw { mean: 1.0, sd: 1.5 },
            x2: NormalLaw { mean: 0.5, sd: 1.0 },
        }
    }
}

/// Generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: u8,
    pub n: usize,
    /// Follow-up length of the produced records.
    pub horizon: usize,
    /// Simulated length; larger than `horizon` for the open-cohort scenario,
    /// whose records are rebaselined to the last `horizon` timepoints.
    pub total_horizon: usize,
    /// Bernoulli probability of each observability attribute.
    pub attribute_probs: Vec<f64>,
    #[serde(default)]
    pub covariates: CovariateLaw,
    /// True incidence hazard over `(x1, x2, a...)`, time scaled by `total_horizon`.
    pub hazard: HazardModel,
    /// True testing rates.
    pub emission: EmissionModel,
    pub progression: f64,
    /// Progression rate for individuals with `a1 = 1`, when it differs.
    #[serde(default)]
    pub progression_a1: Option<f64>,
    pub sensitivity_early: f64,
    pub sensitivity_late: f64,
    pub baseline_late_fraction: f64,
    /// Attribute levels whose testing rates everyone receives in the counterfactual world.
    pub reference: Vec<f64>,
    pub counterfactual_world: bool,
    /// In the counterfactual world of an open cohort, apply the reference
    /// regime only from the new baseline on, so the baseline population is
    /// the factual one. When false the whole run uses the reference regime.
    #[serde(default = "yes")]
    pub counterfactual_from_baseline: bool,
}

impl ScenarioConfig {
    /// The four validation scenarios with their stated parameters.
    pub fn scenario(id: u8, n: usize) -> Result<Self> {
        if !(1..=4).contains(&id) {
            return Err(Error::Config(format!("scenario must be 1..=4, got {id}")));
        }
        let total = if id == 4 { 20 } else { 10 };
        Ok(Self {
            scenario: id,
            n,
            horizon: 10,
            total_horizon: total,
            attribute_probs: vec![0.2],
            covariates: CovariateLaw::default(),
            hazard: HazardModel::weibull(0.005, 1.5, vec![0.5, -0.25, 0.25], total),
            emission: EmissionModel::group_rates([0.025, 0.01], [0.1, 0.05], 0.3, true),
            progression: 0.1,
            progression_a1: (id == 3).then_some(0.13),
            sensitivity_early: if id == 2 { 0.90 } else { 1.0 },
            sensitivity_late: if id == 2 { 0.95 } else { 1.0 },
            baseline_late_fraction: 0.0,
            reference: vec![0.0],
            counterfactual_world: false,
            counterfactual_from_baseline: true,
        })
    }

    /// Seven binary observability attributes with a shared logistic testing
    /// rate. The reference regime sets every attribute to the level that
    /// raises testing.
    pub fn multi_attribute(n: usize) -> Self {
        let emission_coefs = vec![-3.0, 1.2, -0.8, 0.6, -0.5, 0.4, -0.6, -0.3];
        let reference = emission_coefs[1..]
            .iter()
            .map(|c| if *c > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Self {
            scenario: 1,
            n,
            horizon: 10,
            total_horizon: 10,
            attribute_probs: vec![0.2, 0.3, 0.4, 0.3, 0.5, 0.25, 0.35],
            covariates: CovariateLaw::default(),
            hazard: HazardModel::weibull(
                0.005,
                1.5,
                vec![0.5, -0.25, 0.25, 0.1, 0.0, -0.1, 0.15, 0.0, 0.1],
                10,
            ),
            emission: EmissionModel::logistic_shared(emission_coefs, 0.5, true),
            progression: 0.1,
            progression_a1: None,
            sensitivity_early: 1.0,
            sensitivity_late: 1.0,
            baseline_late_fraction: 0.0,
            reference,
            counterfactual_world: false,
            counterfactual_from_baseline: true,
        }
    }

    pub fn counterfactual(&self) -> Self {
        Self {
            counterfactual_world: true,
            ..self.clone()
        }
    }

    pub fn n_attributes(&self) -> usize {
        self.attribute_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(1..=4).contains(&self.scenario) {
            return bad(format!("scenario must be 1..=4, got {}", self.scenario));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.horizon == 0 || self.total_horizon < self.horizon {
            return bad(format!(
                "need 1 <= horizon ({}) <= total_horizon ({})",
                self.horizon, self.total_horizon
            ));
        }
        if self.hazard.horizon != self.total_horizon {
            return bad(format!(
                "hazard horizon {} differs from total_horizon {}",
                self.hazard.horizon, self.total_horizon
            ));
        }
        if self.attribute_probs.is_empty() {
            return bad("at least one observability attribute is required".into());
        }
        if self.hazard.n_coefficients() != 2 + self.n_attributes() {
            return Err(Error::DimensionMismatch {
                what: "hazard coefficients over (x1, x2, a)",
                expected: 2 + self.n_attributes(),
                found: self.hazard.n_coefficients(),
            });
        }
        if self.emission.n_attributes() != self.n_attributes()
            || self.reference.len() != self.n_attributes()
        {
            return Err(Error::DimensionMismatch {
                what: "observability attributes in emission model or reference",
                expected: self.n_attributes(),
                found: self.emission.n_attributes().min(self.reference.len()),
            });
        }
        self.hazard.validate()?;
        let probs = [
            ("progression", self.progression),
            (
                "progression_a1",
                self.progression_a1.unwrap_or(self.progression),
            ),
            ("sensitivity_early", self.sensitivity_early),
            ("sensitivity_late", self.sensitivity_late),
            ("baseline_late_fraction", self.baseline_late_fraction),
        ];
        for (name, v) in probs.iter().chain(
            self.attribute_probs
                .iter()
                .map(|p| ("attribute_probs", *p))
                .collect::<Vec<_>>()
                .iter(),
        ) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::InvalidParameter {
                    name: (*name).into(),
                    value: *v,
                    reason: "must lie in [0, 1]",
                });
            }
        }
        for l in [
            &self.covariates.x1_given_a0,
            &self.covariates.x1_given_a1,
            &self.covariates.x2,
        ] {
            if !(l.sd >= 0.0 && l.sd.is_finite() && l.mean.is_finite()) {
                return bad("covariate laws need finite mean and nonnegative sd".into());
            }
        }
        self.emission.stage_rates(&self.reference)?;
        Ok(())
    }

    /// The generating process written as model parameters over the produced
    /// follow-up. Exact for scenarios 1 and 2's latent process; scenarios 3 and
    /// 4 have no exact representation, so the common progression rate and the
    /// hazard on original time are returned.
    pub fn truth_params(&self) -> HmmParams {
        let mut hazard = self.hazard.clone();
        hazard.horizon = self.horizon;
        if let crate::model::HazardFamily::Weibull { scale, shape } = &mut hazard.family {
            // keep the same hazard values at t = 1..horizon when time is rescaled
            let ratio = self.horizon as f64 / self.total_horizon as f64;
            *scale *= ratio.powf(*shape - 1.0);
        }
        HmmParams {
            hazard,
            emission: self.emission.clone(),
            progression: self.progression,
            baseline_late_fraction: self.baseline_late_fraction,
        }
    }
}

/// Latent truth for one simulated individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualTruth {
    pub id: u64,
    /// Stage at every produced timepoint, also after diagnosis.
    pub stages: Vec<DiseaseStage>,
    /// Would have been diagnosed by the horizon under the reference regime,
    /// using the same latent path and coupled testing draws.
    pub d_cf: bool,
    /// Late stage at the new baseline of a rebaselined cohort.
    pub baseline_late: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedCohort {
    pub records: Vec<IndividualRecord>,
    pub truth: Vec<IndividualTruth>,
    pub horizon: usize,
}

impl SimulatedCohort {
    pub fn incidence(&self) -> f64 {
        self.records.iter().filter(|r| r.diagnosed).count() as f64
            / self.records.len().max(1) as f64
    }
}

struct Draw {
    record: IndividualRecord,
    truth: IndividualTruth,
}

fn draw_normal(rng: &mut impl Rng, law: &NormalLaw) -> f64 {
    // sd = 0 gives the mean; Normal::new accepts it
    Normal::new(law.mean, law.sd)
        .map(|d| d.sample(rng))
        .unwrap_or(law.mean)
}

fn simulate_individual(cfg: &ScenarioConfig, seed: u64, id: u64) -> Result<Draw> {
    let mut rng = individual_rng(seed, id);
    let a: Vec<f64> = cfg
        .attribute_probs
        .iter()
        .map(|p| if rng.random::<f64>() < *p { 1.0 } else { 0.0 })
        .collect();
    let law = if a[0] == 1.0 {
        &cfg.covariates.x1_given_a1
    } else {
        &cfg.covariates.x1_given_a0
    };
    let x = vec![
        draw_normal(&mut rng, law),
        draw_normal(&mut rng, &cfg.covariates.x2),
    ];
    let factual_rates = cfg.emission.stage_rates(&a)?;
    let reference_rates = cfg.emission.stage_rates(&cfg.reference)?;
    let progression = if a[0] == 1.0 {
        cfg.progression_a1.unwrap_or(cfg.progression)
    } else {
        cfg.progression
    };
    let offset = cfg.total_horizon - cfg.horizon;
    let mut stage = 0usize;
    let mut stages = Vec::with_capacity(cfg.total_horizon);
    let mut results = Vec::new();
    let mut open = true;
    let mut cf_diagnosed = false;
    for t in 1..=cfg.total_horizon {
        let u_move: f64 = rng.random();
        let u_split: f64 = rng.random();
        let u_test: f64 = rng.random();
        let u_detect: f64 = rng.random();
        if stage == 0 {
            let h = cfg.hazard.evaluate(&x, &a, t)?;
            if u_move < h {
                stage = if t == 1 && u_split < cfg.baseline_late_fraction {
                    2
                } else {
                    1
                };
            }
        } else if stage == 1 && u_move < progression {
            stage = 2;
        }
        stages.push(DiseaseStage::from_code(stage as u8).expect("stage in 0..3"));
        let use_reference =
            cfg.counterfactual_world && (!cfg.counterfactual_from_baseline || t > offset);
        let rates = if use_reference {
            &reference_rates
        } else {
            &factual_rates
        };
        let outcome = |rate: f64| -> TestResult {
            if u_test >= rate {
                return TestResult::NoTest;
            }
            match stage {
                0 => TestResult::Negative,
                1 if u_detect < cfg.sensitivity_early => TestResult::EarlyPositive,
                2 if u_detect < cfg.sensitivity_late => TestResult::LatePositive,
                _ => TestResult::Negative,
            }
        };
        if open {
            let r = outcome(rates[stage]);
            results.push(r);
            open = !r.is_positive();
        }
        if t > offset && !cf_diagnosed {
            cf_diagnosed = outcome(reference_rates[stage]).is_positive();
        }
    }
    let record = IndividualRecord::new(id, x, a, results);
    let d_cf = cf_diagnosed || record.diagnosed;
    Ok(Draw {
        truth: IndividualTruth {
            id,
            stages,
            d_cf,
            baseline_late: false,
        },
        record,
    })
}

/// Simulates `cfg.n` individuals with ids `1..=n`. Open cohorts are
/// rebaselined before returning.
pub fn simulate_cohort(cfg: &ScenarioConfig, seed: u64) -> Result<SimulatedCohort> {
    cfg.validate()?;
    let draws: Vec<Result<Draw>> = (1..=cfg.n as u64)
        .into_par_iter()
        .map(|id| simulate_individual(cfg, seed, id))
        .collect();
    let mut records = Vec::with_capacity(cfg.n);
    let mut truth = Vec::with_capacity(cfg.n);
    for d in draws {
        let d = d?;
        records.push(d.record);
        truth.push(d.truth);
    }
    let cohort = SimulatedCohort {
        records,
        truth,
        horizon: cfg.total_horizon,
    };
    if cfg.total_horizon > cfg.horizon {
        rebaseline_open_cohort(&cohort, cfg.total_horizon - cfg.horizon)
    } else {
        Ok(cohort)
    }
}

/// Drops everyone diagnosed at or before `baseline`, discards earlier
/// results, and relabels the remaining timepoints from 1.
pub fn rebaseline_open_cohort(
    cohort: &SimulatedCohort,
    baseline: usize,
) -> Result<SimulatedCohort> {
    if baseline >= cohort.horizon {
        return Err(Error::Config(format!(
            "baseline {baseline} must precede the cohort horizon {}",
            cohort.horizon
        )));
    }
    let mut records = Vec::new();
    let mut truth = Vec::new();
    for (rec, tr) in cohort.records.iter().zip(&cohort.truth) {
        if rec.follow_up() <= baseline {
            continue;
        }
        let results = rec.results[baseline..].to_vec();
        records.push(IndividualRecord::new(
            rec.id,
            rec.x.clone(),
            rec.a.clone(),
            results,
        ));
        truth.push(IndividualTruth {
            id: tr.id,
            stages: tr.stages[baseline..].to_vec(),
            d_cf: tr.d_cf,
            baseline_late: tr.stages[baseline - 1] == DiseaseStage::Late,
        });
    }
    Ok(SimulatedCohort {
        records,
        truth,
        horizon: cohort.horizon - baseline,
    })
}
