//! The five subcommands. Each returns the files it wrote, relative to the
//! output directory, plus a few summary values for the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde_json::{json, Value};

use cfhmm::counterfactual::impute_counterfactual_outcomes;
use cfhmm::inference::{fit_mle, EmissionKind, FitResult, HazardKind, ModelSpec};
use cfhmm::io;
use cfhmm::model::{HmmParams, IndividualRecord};
use cfhmm::pipeline::{
    average_deciles, average_net_benefit, run_study, summarize_metrics, summarize_parameters,
};
use cfhmm::prediction::{
    bootstrap_optimism, evaluate_strata, BootstrapSpec, MetricsReport, ModelKind, ScalarMetrics,
    TrainedModel,
};
use cfhmm::simulation::simulate_cohort;

use crate::config::{CohortFiles, RunConfig};
use crate::error::{CliError, CliResult};

/// What a command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, Value>,
}

struct Out<'a> {
    dir: &'a Path,
    outcome: Outcome,
}

impl<'a> Out<'a> {
    fn new(dir: &'a Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self {
            dir,
            outcome: Outcome::default(),
        })
    }

    /// Path of output `name`, recorded in the manifest.
    fn file(&mut self, name: &str) -> PathBuf {
        self.outcome.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn note(&mut self, key: &str, value: Value) {
        self.outcome.summary.insert(key.to_string(), value);
    }
}

fn read_cohort(files: &CohortFiles) -> CliResult<(Vec<IndividualRecord>, usize)> {
    let records = io::read_cohort(&files.baseline, &files.panel, files.horizon)?;
    let horizon = files
        .horizon
        .unwrap_or_else(|| records.iter().map(|r| r.follow_up()).max().unwrap_or(0));
    Ok((records, horizon))
}

fn training_data(cfg: &RunConfig) -> CliResult<(Vec<IndividualRecord>, usize)> {
    let files = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [data] cohort".into()))?;
    read_cohort(files)
}

fn n_attributes(records: &[IndividualRecord]) -> usize {
    records.first().map_or(0, |r| r.a.len())
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Outcome> {
    let scenario = cfg.scenario.resolve()?;
    let mut out = Out::new(&cfg.out)?;
    let cohort = simulate_cohort(&scenario, cfg.seed)?;
    io::write_cohort(
        &out.file("baseline.csv"),
        &out.file("panel.csv"),
        &cohort.records,
    )?;
    if cfg.simulate.truth {
        io::write_truth(
            &out.file("truth_stages.csv"),
            &out.file("truth_individuals.csv"),
            &cohort,
        )?;
    }
    let diagnosed = cohort.records.iter().filter(|r| r.diagnosed).count();
    out.note("individuals", json!(cohort.records.len()));
    out.note("diagnosed", json!(diagnosed));
    if cfg.simulate.counterfactual {
        let cf = simulate_cohort(&scenario.counterfactual(), cfg.seed)?;
        io::write_cohort(
            &out.file("counterfactual_baseline.csv"),
            &out.file("counterfactual_panel.csv"),
            &cf.records,
        )?;
        if cfg.simulate.truth {
            io::write_truth(
                &out.file("counterfactual_truth_stages.csv"),
                &out.file("counterfactual_truth_individuals.csv"),
                &cf,
            )?;
        }
        out.note(
            "counterfactual_diagnosed",
            json!(cf.records.iter().filter(|r| r.diagnosed).count()),
        );
    }
    println!(
        "simulated {} individuals over {} timepoints; {diagnosed} diagnosed",
        cohort.records.len(),
        cohort.horizon
    );
    Ok(out.outcome)
}

/// The configured model structure, or one inferred from the data: Weibull
/// hazard, group testing rates for a single attribute and the shared logistic
/// form otherwise.
fn model_spec(cfg: &RunConfig, records: &[IndividualRecord], horizon: usize) -> ModelSpec {
    cfg.model.clone().unwrap_or_else(|| {
        let n_a = n_attributes(records);
        ModelSpec {
            n_x: records.first().map_or(0, |r| r.x.len()),
            n_a,
            horizon,
            hazard: HazardKind::Weibull,
            emission: if n_a == 1 {
                EmissionKind::GroupRates
            } else {
                EmissionKind::LogisticShared
            },
            constraint_late_ge_early: true,
            late_fraction_free: cfg.fit.late_fraction_free,
        }
    })
}

pub fn fit(cfg: &RunConfig) -> CliResult<Outcome> {
    let (records, horizon) = training_data(cfg)?;
    let spec = model_spec(cfg, &records, horizon);
    let init: HmmParams = match &cfg.init {
        Some(path) => io::read_json(path)?,
        None => spec.default_init(),
    };
    let mut opts = cfg.fit.clone();
    if cfg.init.is_none() {
        opts.late_fraction_free = spec.late_fraction_free;
    }
    let mut out = Out::new(&cfg.out)?;
    let result: FitResult = fit_mle(&records, &init, &opts)?;
    let fit_path = out.file("fit.json");
    io::write_json(&fit_path, &result)?;
    io::write_json(&out.file("theta.json"), &result.theta_hat)?;
    if let Some(trace) = &result.trace {
        io::write_trace(&out.file("trace.csv"), trace)?;
    }
    io::write_table(
        &out.file("parameters.csv"),
        &["parameter", "estimate"],
        result
            .theta_hat
            .named_values()
            .into_iter()
            .map(|(n, v)| vec![n, v.to_string()]),
    )?;
    out.note("converged", json!(result.converged));
    out.note("iterations", json!(result.iterations));
    out.note("log_likelihood", json!(result.log_likelihood));
    out.note("excluded", json!(result.excluded.len()));
    println!(
        "log-likelihood {:.6} after {} iterations, gradient norm {:.3e}, {}",
        result.log_likelihood,
        result.iterations,
        result.gradient_norm,
        if result.converged {
            "converged"
        } else {
            "not converged"
        }
    );
    if !result.excluded.is_empty() {
        println!(
            "{} records with impossible histories excluded",
            result.excluded.len()
        );
    }
    if !result.converged {
        return Err(CliError::NotConverged {
            iterations: result.iterations,
            gradient_norm: result.gradient_norm,
            artifact: fit_path.display().to_string(),
        });
    }
    Ok(out.outcome)
}

pub fn impute(cfg: &RunConfig) -> CliResult<Outcome> {
    let (records, _) = training_data(cfg)?;
    let theta: HmmParams = io::read_json(&cfg.theta_path())?;
    let reference = cfg.reference_regime(n_attributes(&records))?;
    let mut opts = cfg.imputation.clone();
    opts.seed = cfg.seed;
    let result = impute_counterfactual_outcomes(&theta, &records, &reference, &opts)?;
    let mut out = Out::new(&cfg.out)?;
    io::write_imputed(&out.file("imputed.csv"), &result)?;
    for f in &result.factors {
        let group = if f.attributes.is_empty() {
            "pooled".to_string()
        } else {
            format!("{:?}", f.attributes)
        };
        println!(
            "recalibration factor ({group}, n = {}): {:.6}{}",
            f.n,
            f.recalibration.factor,
            if f.recalibration.clamped() {
                format!(" (clamped from {:.6})", f.recalibration.raw)
            } else {
                String::new()
            }
        );
    }
    println!("{} probabilities clamped to 1", result.n_clamped);
    let observed = records.iter().filter(|r| r.diagnosed).count();
    let imputed = result.records.iter().filter(|r| r.d_cf).count();
    println!("diagnosed: {observed} observed, {imputed} imputed");
    out.note(
        "factors",
        json!(result
            .factors
            .iter()
            .map(|f| f.recalibration.factor)
            .collect::<Vec<_>>()),
    );
    out.note("clamped", json!(result.n_clamped));
    out.note("observed_diagnoses", json!(observed));
    out.note("imputed_diagnoses", json!(imputed));
    Ok(out.outcome)
}

fn imputed_outcomes(cfg: &RunConfig, records: &[IndividualRecord]) -> CliResult<Vec<bool>> {
    let path = cfg.imputed_path();
    let map = io::read_imputed_outcomes(&path)?;
    records
        .iter()
        .map(|r| {
            map.get(&r.id).copied().ok_or_else(|| {
                CliError::Config(format!("{} has no row for id {}", path.display(), r.id))
            })
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig) -> CliResult<Outcome> {
    let (train, _) = training_data(cfg)?;
    let files = cfg
        .validation
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluate needs a [validation] cohort".into()))?;
    let (validation, _) = read_cohort(files)?;
    let n_a = n_attributes(&train);
    let strata = cfg.strata(n_a)?;
    let target: Vec<bool> = validation.iter().map(|r| r.diagnosed).collect();
    let attrs: Vec<&[f64]> = validation.iter().map(|r| r.a.as_slice()).collect();

    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for &kind in &cfg.models {
        let (data, y) = match kind {
            ModelKind::Naive | ModelKind::Blind => {
                let y = train.iter().map(|r| r.diagnosed).collect();
                (train.clone(), y)
            }
            ModelKind::Imputed => (train.clone(), imputed_outcomes(cfg, &train)?),
            ModelKind::Ideal => {
                let files = cfg.ideal.as_ref().ok_or_else(|| {
                    CliError::Config("the ideal model needs an [ideal] cohort".into())
                })?;
                let (data, _) = read_cohort(files)?;
                let y = data.iter().map(|r| r.diagnosed).collect();
                (data, y)
            }
        };
        let model = TrainedModel::train(kind, &data, &y)?;
        let pred = model.predict(&validation)?;
        for r in evaluate_strata(&pred, &target, &attrs, &strata, &cfg.evaluation)? {
            reports.push((kind.to_string(), r));
        }
    }

    let mut out = Out::new(&cfg.out)?;
    let refs: Vec<(String, &MetricsReport)> = reports.iter().map(|(m, r)| (m.clone(), r)).collect();
    io::write_metric_reports(&out.file("metrics.csv"), &refs)?;
    io::write_deciles(&out.file("deciles.csv"), &refs)?;
    io::write_net_benefit(&out.file("net_benefit.csv"), &refs)?;
    for (model, r) in &reports {
        println!(
            "{model:<8} {:<8} n {:>6}  AUROC {:.3}  slope {:.3}  O:E {:.3}",
            r.stratum, r.n, r.metrics.auroc, r.metrics.calibration_slope, r.metrics.oe_ratio
        );
    }

    if cfg.bootstrap.replicates > 0 {
        let models: Vec<ModelKind> = cfg
            .models
            .iter()
            .copied()
            .filter(|m| *m != ModelKind::Ideal)
            .collect();
        if models.len() < cfg.models.len() {
            warn!("the ideal model is left out of the bootstrap");
        }
        if !models.is_empty() {
            let theta: HmmParams = io::read_json(&cfg.theta_path())?;
            let spec = BootstrapSpec {
                models,
                fit: cfg.fit.clone(),
                imputation: cfg.imputation.clone(),
                reference: cfg.reference_regime(n_a)?,
                strata: strata.clone(),
                replicates: cfg.bootstrap.replicates,
                seed: cfg.seed,
            };
            let result = bootstrap_optimism(&train, &theta, &spec)?;
            let rows = result.entries.iter().flat_map(|e| {
                ScalarMetrics::NAMES
                    .iter()
                    .enumerate()
                    .map(move |(k, name)| {
                        vec![
                            e.model.to_string(),
                            e.stratum.clone(),
                            name.to_string(),
                            e.apparent.values()[k].to_string(),
                            e.optimism.values()[k].to_string(),
                            e.corrected.values()[k].to_string(),
                        ]
                    })
            });
            io::write_table(
                &out.file("optimism.csv"),
                &[
                    "model",
                    "stratum",
                    "metric",
                    "apparent",
                    "optimism",
                    "corrected",
                ],
                rows,
            )?;
            out.note("bootstrap_effective", json!(result.effective_replicates));
            out.note("bootstrap_failed", json!(result.failed));
        }
    }
    out.note("validation_n", json!(validation.len()));
    Ok(out.outcome)
}

pub fn replicate(cfg: &RunConfig) -> CliResult<Outcome> {
    let study = cfg.study()?;
    info!(
        "scenario {}: {} replications of N = {}",
        study.scenario.scenario, study.replications, study.scenario.n
    );
    let result = run_study(&study)?;
    let reps = &result.replications;
    let mut out = Out::new(&cfg.out)?;

    let names: Vec<String> = reps
        .first()
        .map(|r| {
            r.fit
                .theta_hat
                .named_values()
                .into_iter()
                .map(|(n, _)| n)
                .collect()
        })
        .unwrap_or_default();
    let mut header: Vec<&str> = vec![
        "replication",
        "seed",
        "converged",
        "iterations",
        "log_likelihood",
        "gradient_norm",
        "excluded",
        "clamped",
    ];
    header.extend(names.iter().map(String::as_str));
    io::write_table(
        &out.file("replications.csv"),
        &header,
        reps.iter().map(|r| {
            let mut row = vec![
                r.replication.to_string(),
                r.seed.to_string(),
                r.fit.converged.to_string(),
                r.fit.iterations.to_string(),
                r.fit.log_likelihood.to_string(),
                r.fit.gradient_norm.to_string(),
                r.fit.excluded.len().to_string(),
                r.n_clamped.to_string(),
            ];
            row.extend(
                r.fit
                    .theta_hat
                    .named_values()
                    .into_iter()
                    .map(|(_, v)| v.to_string()),
            );
            row
        }),
    )?;
    io::write_table(
        &out.file("factors.csv"),
        &["replication", "attributes", "n", "factor", "raw"],
        reps.iter().flat_map(|r| {
            r.factors.iter().map(move |f| {
                vec![
                    r.replication.to_string(),
                    f.attributes
                        .iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                    f.n.to_string(),
                    f.recalibration.factor.to_string(),
                    f.recalibration.raw.to_string(),
                ]
            })
        }),
    )?;
    let incidence: Vec<_> = reps
        .iter()
        .flat_map(|r| r.incidence.iter().map(move |row| (r.replication, row)))
        .collect();
    io::write_incidence(&out.file("incidence.csv"), &incidence)?;
    io::write_table(
        &out.file("metrics_by_replication.csv"),
        &["replication", "model", "stratum", "metric", "value"],
        reps.iter().flat_map(|r| {
            r.reports.iter().flat_map(move |mr| {
                ScalarMetrics::NAMES
                    .iter()
                    .zip(mr.report.metrics.values())
                    .map(move |(name, v)| {
                        vec![
                            r.replication.to_string(),
                            mr.model.to_string(),
                            mr.report.stratum.clone(),
                            name.to_string(),
                            v.to_string(),
                        ]
                    })
            })
        }),
    )?;

    let truth = study.scenario.truth_params();
    let fits: Vec<&HmmParams> = reps.iter().map(|r| &r.fit.theta_hat).collect();
    let params = summarize_parameters(&truth, &fits);
    io::write_parameter_summary(&out.file("parameter_summary.csv"), &params)?;
    let metrics = summarize_metrics(reps);
    io::write_metric_summaries(&out.file("metric_summary.csv"), &metrics)?;
    io::write_averaged_deciles(&out.file("deciles.csv"), &average_deciles(reps))?;
    io::write_averaged_net_benefit(&out.file("net_benefit.csv"), &average_net_benefit(reps))?;

    for f in &result.failures {
        warn!("replication {} failed: {}", f.0, f.1);
    }
    println!(
        "{} of {} replications completed",
        reps.len(),
        study.replications
    );
    for m in metrics.iter().filter(|m| m.metric == "oe_ratio") {
        println!(
            "{:<8} {:<8} O:E {:.3} (SD {})",
            m.model.to_string(),
            m.stratum,
            m.mean,
            m.sd.map_or("-".into(), |s| format!("{s:.3}"))
        );
    }
    out.note("effective_replications", json!(reps.len()));
    out.note(
        "failures",
        json!(result
            .failures
            .iter()
            .map(|(i, e)| json!({"replication": i, "error": e}))
            .collect::<Vec<_>>()),
    );
    out.note(
        "scenario",
        serde_json::to_value(&study.scenario).map_err(cfhmm::Error::from)?,
    );
    Ok(out.outcome)
}
