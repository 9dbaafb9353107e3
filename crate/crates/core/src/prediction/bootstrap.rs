//! Optimism correction of apparent performance by bootstrap resampling of
//! the whole chain: HMM fit, re-imputation, model training and evaluation.

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate_strata, EvaluationOptions, ScalarMetrics, Stratum};
use super::models::{ModelKind, TrainedModel};
use crate::counterfactual::{impute_counterfactual_outcomes, ImputationOptions, ReferenceRegime};
use crate::error::{Error, Result};
use crate::inference::{fit_mle, FitOptions};
use crate::model::{HmmParams, IndividualRecord};
use crate::seed;

/// Largest tolerated fraction of failed bootstrap iterations.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub models: Vec<ModelKind>,
    pub fit: FitOptions,
    pub imputation: ImputationOptions,
    pub reference: ReferenceRegime,
    pub strata: Vec<Stratum>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimismEntry {
    pub model: ModelKind,
    pub stratum: String,
    pub apparent: ScalarMetrics,
    /// Mean of bootstrap-sample minus original-data performance.
    pub optimism: ScalarMetrics,
    pub corrected: ScalarMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub entries: Vec<OptimismEntry>,
    pub effective_replicates: usize,
    pub failed: usize,
}

fn outcome_for(kind: ModelKind, observed: &[bool], imputed: &[bool]) -> Result<Vec<bool>> {
    match kind {
        ModelKind::Naive | ModelKind::Blind => Ok(observed.to_vec()),
        ModelKind::Imputed => Ok(imputed.to_vec()),
        ModelKind::Ideal => Err(Error::Config(
            "the ideal model needs a reference-regime cohort and cannot be bootstrapped".into(),
        )),
    }
}

/// Scalar metrics per (model, stratum), trained on `train` and evaluated on
/// `eval` against `eval_target`.
fn performance(
    models: &[ModelKind],
    train: &[IndividualRecord],
    train_imputed: &[bool],
    eval: &[IndividualRecord],
    eval_target: &[bool],
    strata: &[Stratum],
    opts: &EvaluationOptions,
) -> Result<Vec<ScalarMetrics>> {
    let observed: Vec<bool> = train.iter().map(|r| r.diagnosed).collect();
    let attrs: Vec<&[f64]> = eval.iter().map(|r| r.a.as_slice()).collect();
    let mut out = Vec::with_capacity(models.len() * strata.len());
    for &kind in models {
        let y = outcome_for(kind, &observed, train_imputed)?;
        let model = TrainedModel::train(kind, train, &y)?;
        let pred = model.predict(eval)?;
        for report in evaluate_strata(&pred, eval_target, &attrs, strata, opts)? {
            out.push(report.metrics);
        }
    }
    Ok(out)
}

/// Apparent performance of `spec.models` on `records`, corrected by the mean
/// optimism over `spec.replicates` bootstrap resamples. The HMM is refitted in
/// every resample starting from `theta_full`; original-data performance is
/// measured against the full-data imputed outcomes.
pub fn bootstrap_optimism(
    records: &[IndividualRecord],
    theta_full: &HmmParams,
    spec: &BootstrapSpec,
) -> Result<BootstrapResult> {
    if records.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    if spec.models.is_empty() || spec.strata.is_empty() {
        return Err(Error::Config(
            "bootstrap needs at least one model and one stratum".into(),
        ));
    }
    // summary metrics only; bins and thresholds are irrelevant here
    let eval_opts = EvaluationOptions {
        bins: 1,
        thresholds: vec![0.5],
    };
    let full_imputed =
        impute_counterfactual_outcomes(theta_full, records, &spec.reference, &spec.imputation)?
            .d_cf();
    let apparent = performance(
        &spec.models,
        records,
        &full_imputed,
        records,
        &full_imputed,
        &spec.strata,
        &eval_opts,
    )?;

    let iterations: Vec<Result<Vec<ScalarMetrics>>> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let b_seed = seed::derive(spec.seed, b + 1);
            let mut rng = seed::rng(seed::derive(b_seed, 0));
            let n = records.len();
            let sample: Vec<IndividualRecord> = (0..n)
                .map(|k| {
                    let mut r = records[rng.random_range(0..n)].clone();
                    r.id = k as u64 + 1;
                    r
                })
                .collect();
            let fit = fit_mle(&sample, theta_full, &spec.fit)?;
            if !fit.converged {
                warn!(
                    "bootstrap iteration {b}: fit did not converge ({:?})",
                    fit.message
                );
            }
            let imp_opts = ImputationOptions {
                seed: seed::derive(b_seed, 4),
                ..spec.imputation.clone()
            };
            let sample_imputed = impute_counterfactual_outcomes(
                &fit.theta_hat,
                &sample,
                &spec.reference,
                &imp_opts,
            )?
            .d_cf();
            let optimistic = performance(
                &spec.models,
                &sample,
                &sample_imputed,
                &sample,
                &sample_imputed,
                &spec.strata,
                &eval_opts,
            )?;
            let realistic = performance(
                &spec.models,
                &sample,
                &sample_imputed,
                records,
                &full_imputed,
                &spec.strata,
                &eval_opts,
            )?;
            Ok(optimistic
                .iter()
                .zip(&realistic)
                .map(|(o, r)| o.zip_with(r, |a, b| a - b))
                .collect())
        })
        .collect();

    let mut failed = 0;
    let mut sum = vec![ScalarMetrics::default(); apparent.len()];
    for (b, it) in iterations.into_iter().enumerate() {
        match it {
            Ok(opt) => {
                for (s, o) in sum.iter_mut().zip(&opt) {
                    *s = s.zip_with(o, |a, b| a + b);
                }
            }
            Err(e) => {
                warn!("bootstrap iteration {b} failed: {e}");
                failed += 1;
            }
        }
    }
    if spec.replicates > 0 && failed as f64 > MAX_FAILURE_FRACTION * spec.replicates as f64 {
        return Err(Error::Bootstrap {
            failed,
            total: spec.replicates,
        });
    }
    let effective = spec.replicates - failed;
    info!(
        "bootstrap: {effective} of {} iterations used",
        spec.replicates
    );

    let mut entries = Vec::with_capacity(apparent.len());
    let mut k = 0;
    for &model in &spec.models {
        for stratum in &spec.strata {
            let optimism = if effective == 0 {
                ScalarMetrics::default()
            } else {
                sum[k].zip_with(&sum[k], |a, _| a / effective as f64)
            };
            entries.push(OptimismEntry {
                model,
                stratum: stratum.label.clone(),
                apparent: apparent[k],
                optimism,
                corrected: apparent[k].zip_with(&optimism, |a, o| a - o),
            });
            k += 1;
        }
    }
    Ok(BootstrapResult {
        entries,
        effective_replicates: effective,
        failed,
    })
}
