//! Across-replication summaries.

use serde::{Deserialize, Serialize};

use super::ReplicationResult;
use crate::model::HmmParams;
use crate::prediction::{ModelKind, ScalarMetrics};

/// Mean and sample standard deviation of the finite values; the deviation
/// is absent with fewer than two.
fn mean_sd(values: impl IntoIterator<Item = f64>) -> (f64, Option<f64>, usize) {
    let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
    let n = v.len();
    if n == 0 {
        return (f64::NAN, None, 0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1)
        .then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (mean, sd, n)
}

/// Parameter recovery in the layout of a simulation results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub empirical_se: Option<f64>,
    pub mse: f64,
    pub n: usize,
}

/// Summaries of `fits` against `truth`; the truth is NaN for parameters the
/// generating model does not share by name.
pub fn summarize_parameters(truth: &HmmParams, fits: &[&HmmParams]) -> Vec<ParameterSummary> {
    let Some(first) = fits.first() else {
        return Vec::new();
    };
    let truth_values = truth.named_values();
    let per_fit: Vec<Vec<(String, f64)>> = fits.iter().map(|f| f.named_values()).collect();
    first
        .named_values()
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let t = truth_values
                .iter()
                .find(|(n, _)| n == name)
                .map_or(f64::NAN, |(_, v)| *v);
            let (mean, empirical_se, n) = mean_sd(per_fit.iter().map(|f| f[k].1));
            let mse =
                per_fit.iter().map(|f| (f[k].1 - t).powi(2)).sum::<f64>() / per_fit.len() as f64;
            ParameterSummary {
                name: name.clone(),
                truth: t,
                mean,
                bias: mean - t,
                empirical_se,
                mse,
                n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model: ModelKind,
    pub stratum: String,
    pub metric: String,
    pub mean: f64,
    pub sd: Option<f64>,
    pub n: usize,
}

/// Mean and SD of every scalar metric per model and stratum.
pub fn summarize_metrics(reps: &[ReplicationResult]) -> Vec<MetricSummary> {
    let Some(first) = reps.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for mr in &first.reports {
        let values: Vec<ScalarMetrics> = reps
            .iter()
            .filter_map(|r| r.report(mr.model, &mr.report.stratum).map(|m| m.metrics))
            .collect();
        for (k, name) in ScalarMetrics::NAMES.iter().enumerate() {
            let (mean, sd, n) = mean_sd(values.iter().map(|m| m.values()[k]));
            out.push(MetricSummary {
                model: mr.model,
                stratum: mr.report.stratum.clone(),
                metric: name.to_string(),
                mean,
                sd,
                n,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedBin {
    pub model: ModelKind,
    pub stratum: String,
    pub bin: usize,
    pub mean_pred: f64,
    pub observed: f64,
    pub count: f64,
}

/// Calibration-bin coordinates averaged over replications.
pub fn average_deciles(reps: &[ReplicationResult]) -> Vec<AveragedBin> {
    let Some(first) = reps.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for mr in &first.reports {
        let reports: Vec<_> = reps
            .iter()
            .filter_map(|r| r.report(mr.model, &mr.report.stratum))
            .collect();
        for (b, bin) in mr.report.deciles.iter().enumerate() {
            let bins: Vec<_> = reports.iter().filter_map(|r| r.deciles.get(b)).collect();
            let k = bins.len() as f64;
            out.push(AveragedBin {
                model: mr.model,
                stratum: mr.report.stratum.clone(),
                bin: bin.bin,
                mean_pred: bins.iter().map(|x| x.mean_pred).sum::<f64>() / k,
                observed: bins.iter().map(|x| x.observed).sum::<f64>() / k,
                count: bins.iter().map(|x| x.count as f64).sum::<f64>() / k,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedNetBenefit {
    pub model: ModelKind,
    pub stratum: String,
    pub threshold: f64,
    pub net_benefit: f64,
    pub treat_all: f64,
    pub treat_none: f64,
}

/// Net-benefit curves averaged over replications.
pub fn average_net_benefit(reps: &[ReplicationResult]) -> Vec<AveragedNetBenefit> {
    let Some(first) = reps.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for mr in &first.reports {
        let reports: Vec<_> = reps
            .iter()
            .filter_map(|r| r.report(mr.model, &mr.report.stratum))
            .collect();
        for (j, point) in mr.report.net_benefit.iter().enumerate() {
            let pts: Vec<_> = reports
                .iter()
                .filter_map(|r| r.net_benefit.get(j))
                .collect();
            let k = pts.len() as f64;
            out.push(AveragedNetBenefit {
                model: mr.model,
                stratum: mr.report.stratum.clone(),
                threshold: point.threshold,
                net_benefit: pts.iter().map(|p| p.model).sum::<f64>() / k,
                treat_all: pts.iter().map(|p| p.treat_all).sum::<f64>() / k,
                treat_none: 0.0,
            });
        }
    }
    out
}
