//! End-to-end replication studies: simulate, fit, impute, train, evaluate.

mod summary;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    impute_counterfactual_outcomes, ImputationOptions, ReferenceRegime, StratumFactor,
};
use crate::error::{Error, Result};
use crate::inference::{
    fit_mle, EmissionKind, FitOptions, FitResult, HazardKind, ImpossibleRecords, ModelSpec,
};
use crate::model::{EmissionForm, HazardFamily, IndividualRecord};
use crate::prediction::{
    evaluate_strata, EvaluationOptions, MetricsReport, ModelKind, Stratum, TrainedModel,
};
use crate::seed;
use crate::simulation::{simulate_cohort, ScenarioConfig};

pub use summary::{
    average_deciles, average_net_benefit, summarize_metrics, summarize_parameters, AveragedBin,
    AveragedNetBenefit, MetricSummary, ParameterSummary,
};

/// Sub-seed indices under a replication seed.
pub const SEED_TRAIN: u64 = 1;
pub const SEED_IDEAL: u64 = 2;
pub const SEED_VALIDATION: u64 = 3;
pub const SEED_IMPUTATION: u64 = 4;

fn default_validation_n() -> usize {
    50_000
}

fn default_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}

/// Settings of a replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
    #[serde(default = "default_validation_n")]
    pub validation_n: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
    /// Structure of the fitted model; derived from the scenario when absent.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelKind>,
    /// Evaluation strata; overall plus each attribute level when absent.
    #[serde(default)]
    pub strata: Option<Vec<Stratum>>,
    #[serde(default)]
    pub imputation: ImputationOptions,
    #[serde(default)]
    pub evaluation: EvaluationOptions,
}

impl StudyConfig {
    /// Defaults for `scenario`. Imperfect test sensitivity produces histories
    /// the perfect-test model cannot generate, so those records are left out
    /// of the fit instead of aborting it.
    pub fn new(scenario: ScenarioConfig, replications: usize, seed: u64) -> Self {
        let imperfect = scenario.sensitivity_early < 1.0 || scenario.sensitivity_late < 1.0;
        Self {
            scenario,
            validation_n: default_validation_n(),
            replications,
            seed,
            fit: FitOptions {
                impossible_records: if imperfect {
                    ImpossibleRecords::Exclude
                } else {
                    ImpossibleRecords::Error
                },
                ..FitOptions::default()
            },
            model: None,
            models: default_models(),
            strata: None,
            imputation: ImputationOptions::default(),
            evaluation: EvaluationOptions::default(),
        }
    }

    /// The fitted structure: the generator's hazard and emission families
    /// over the produced follow-up. The late fraction is free only for open
    /// cohorts, whose cases at the new baseline may already be late.
    pub fn model_spec(&self) -> ModelSpec {
        if let Some(m) = &self.model {
            return m.clone();
        }
        let s = &self.scenario;
        ModelSpec {
            n_x: 2,
            n_a: s.n_attributes(),
            horizon: s.horizon,
            hazard: match s.hazard.family {
                HazardFamily::Weibull { .. } => HazardKind::Weibull,
                HazardFamily::PiecewiseBaseline { .. } => HazardKind::Piecewise,
            },
            emission: match s.emission.form {
                EmissionForm::GroupRates { .. } => EmissionKind::GroupRates,
                EmissionForm::LogisticShared { .. } => EmissionKind::LogisticShared,
            },
            constraint_late_ge_early: s.emission.constraint_late_ge_early,
            late_fraction_free: s.total_horizon > s.horizon,
        }
    }

    pub fn strata(&self) -> Vec<Stratum> {
        self.strata
            .clone()
            .unwrap_or_else(|| Stratum::standard(self.scenario.n_attributes()))
    }

    pub fn reference(&self) -> ReferenceRegime {
        ReferenceRegime::fixed(self.scenario.reference.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.validation_n == 0 {
            return Err(Error::Config("validation_n must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        let mut seen = self.models.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config(format!(
                "duplicate model names in {:?}",
                self.models
            )));
        }
        let m = self.model_spec();
        if m.n_a != self.scenario.n_attributes() || m.horizon != self.scenario.horizon {
            return Err(Error::Config(
                "fitted model layout differs from the scenario's".into(),
            ));
        }
        Ok(())
    }
}

/// Observed and imputed training-set incidence in one stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub stratum: String,
    pub n: usize,
    pub observed: f64,
    pub imputed: f64,
    /// Mean counterfactual diagnosis probability.
    pub mean_p_cf: f64,
    /// Fraction diagnosed in the matched reference-regime training cohort.
    pub counterfactual_world: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: ModelKind,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub fit: FitResult,
    pub factors: Vec<StratumFactor>,
    pub n_clamped: usize,
    pub incidence: Vec<IncidenceRow>,
    pub reports: Vec<ModelReport>,
}

impl ReplicationResult {
    pub fn report(&self, model: ModelKind, stratum: &str) -> Option<&MetricsReport> {
        self.reports
            .iter()
            .find(|r| r.model == model && r.report.stratum == stratum)
            .map(|r| &r.report)
    }

    pub fn incidence(&self, stratum: &str) -> Option<&IncidenceRow> {
        self.incidence.iter().find(|r| r.stratum == stratum)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub replications: Vec<ReplicationResult>,
    /// `(replication index, error message)` for replications that failed.
    pub failures: Vec<(usize, String)>,
}

fn mean_over<T>(items: &[T], f: impl Fn(&T) -> f64) -> f64 {
    items.iter().map(f).sum::<f64>() / items.len().max(1) as f64
}

/// One replication with seed `derive(cfg.seed, index + 1)`.
pub fn run_replication(cfg: &StudyConfig, index: usize) -> Result<ReplicationResult> {
    let rep_seed = seed::derive(cfg.seed, index as u64 + 1);
    let train = simulate_cohort(&cfg.scenario, seed::derive(rep_seed, SEED_TRAIN))?;
    let spec = cfg.model_spec();
    let fit_opts = FitOptions {
        late_fraction_free: spec.late_fraction_free,
        ..cfg.fit.clone()
    };
    let fit = fit_mle(&train.records, &spec.default_init(), &fit_opts)?;
    if !fit.converged {
        warn!(
            "replication {index}: fit did not converge ({:?})",
            fit.message
        );
    }
    let reference = cfg.reference();
    let imp_opts = ImputationOptions {
        seed: seed::derive(rep_seed, SEED_IMPUTATION),
        impossible_records: cfg.fit.impossible_records,
        ..cfg.imputation.clone()
    };
    let imputed =
        impute_counterfactual_outcomes(&fit.theta_hat, &train.records, &reference, &imp_opts)?;
    let d_obs: Vec<bool> = train.records.iter().map(|r| r.diagnosed).collect();
    let d_cf = imputed.d_cf();

    let needs_ideal = cfg.models.contains(&ModelKind::Ideal);
    let ideal_cohort = if needs_ideal {
        Some(simulate_cohort(
            &cfg.scenario.counterfactual(),
            seed::derive(rep_seed, SEED_IDEAL),
        )?)
    } else {
        None
    };
    let validation_cfg = ScenarioConfig {
        n: cfg.validation_n,
        ..cfg.scenario.counterfactual()
    };
    let validation = simulate_cohort(&validation_cfg, seed::derive(rep_seed, SEED_VALIDATION))?;
    let target: Vec<bool> = validation.records.iter().map(|r| r.diagnosed).collect();
    let attrs: Vec<&[f64]> = validation.records.iter().map(|r| r.a.as_slice()).collect();
    let strata = cfg.strata();

    let mut reports = Vec::new();
    for &kind in &cfg.models {
        let model = match kind {
            ModelKind::Naive | ModelKind::Blind => {
                TrainedModel::train(kind, &train.records, &d_obs)?
            }
            ModelKind::Imputed => TrainedModel::train(kind, &train.records, &d_cf)?,
            ModelKind::Ideal => {
                let c = ideal_cohort.as_ref().expect("ideal cohort simulated");
                let y: Vec<bool> = c.records.iter().map(|r| r.diagnosed).collect();
                TrainedModel::train(kind, &c.records, &y)?
            }
        };
        let pred = model.predict(&validation.records)?;
        for report in evaluate_strata(&pred, &target, &attrs, &strata, &cfg.evaluation)? {
            reports.push(ModelReport {
                model: kind,
                report,
            });
        }
    }

    let incidence = strata
        .iter()
        .map(|s| {
            let idx: Vec<usize> = (0..train.records.len())
                .filter(|&i| s.contains(&train.records[i].a))
                .collect();
            let cf_world: Vec<&IndividualRecord> = ideal_cohort
                .as_ref()
                .map(|c| c.records.iter().filter(|r| s.contains(&r.a)).collect())
                .unwrap_or_default();
            IncidenceRow {
                stratum: s.label.clone(),
                n: idx.len(),
                observed: mean_over(&idx, |&i| d_obs[i] as u8 as f64),
                imputed: mean_over(&idx, |&i| d_cf[i] as u8 as f64),
                mean_p_cf: mean_over(&idx, |&i| imputed.records[i].p_cf),
                counterfactual_world: if cf_world.is_empty() {
                    f64::NAN
                } else {
                    mean_over(&cf_world, |r| r.diagnosed as u8 as f64)
                },
            }
        })
        .collect();

    Ok(ReplicationResult {
        replication: index,
        seed: rep_seed,
        fit,
        factors: imputed.factors,
        n_clamped: imputed.n_clamped,
        incidence,
        reports,
    })
}

/// Runs every replication in parallel; failed replications are logged and
/// listed, the rest returned in index order.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let outcomes: Vec<Result<ReplicationResult>> = (0..cfg.replications)
        .into_par_iter()
        .map(|i| run_replication(cfg, i))
        .collect();
    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => replications.push(r),
            Err(e) => {
                warn!("replication {i} failed: [{}] {e}", e.code());
                failures.push((i, format!("[{}] {e}", e.code())));
            }
        }
    }
    info!(
        "{} of {} replications completed",
        replications.len(),
        cfg.replications
    );
    if replications.is_empty() {
        let first = failures
            .first()
            .map(|(_, m)| m.as_str())
            .unwrap_or_default();
        return Err(Error::Config(format!(
            "all {} replications failed; first: {first}",
            cfg.replications
        )));
    }
    Ok(StudyResult {
        replications,
        failures,
    })
}
