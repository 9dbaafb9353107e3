//! CSV cohort and result files, JSON artifacts.
//!
//! A cohort is two files. The baseline file has a header `id,x1..xk,a1..am`
//! and one row per individual. The panel file has a header `id,t,r` and rows
//! sorted by `(id, t)`; timepoints missing from the panel are read as "no
//! test". An undiagnosed individual is followed to the horizon; a diagnosed
//! one up to the first positive result, after which no rows may follow.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::counterfactual::ImputationResult;
use crate::error::{Error, Result};
use crate::inference::TraceEntry;
use crate::model::{IndividualRecord, TestResult};
use crate::pipeline::{
    AveragedBin, AveragedNetBenefit, IncidenceRow, MetricSummary, ParameterSummary,
};
use crate::prediction::MetricsReport;
use crate::simulation::SimulatedCohort;

fn display(path: &Path) -> String {
    path.display().to_string()
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            file: display(path),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn write_rows(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flag(b: bool) -> String {
    (b as u8).to_string()
}

/// Baseline and panel files for `records`. Every follow-up timepoint is
/// written, including those without a test.
pub fn write_cohort(baseline: &Path, panel: &Path, records: &[IndividualRecord]) -> Result<()> {
    let (nx, na) = records.first().map_or((0, 0), |r| (r.x.len(), r.a.len()));
    let mut h = vec!["id".to_string()];
    h.extend((1..=nx).map(|j| format!("x{j}")));
    h.extend((1..=na).map(|j| format!("a{j}")));
    let mut sorted: Vec<&IndividualRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    write_rows(
        baseline,
        &h,
        sorted.iter().map(|r| {
            std::iter::once(r.id.to_string())
                .chain(r.x.iter().chain(&r.a).map(|v| v.to_string()))
                .collect()
        }),
    )?;
    write_rows(
        panel,
        &header(&["id", "t", "r"]),
        sorted.iter().flat_map(|r| {
            r.results.iter().enumerate().map(move |(t, res)| {
                vec![
                    r.id.to_string(),
                    (t + 1).to_string(),
                    res.code().to_string(),
                ]
            })
        }),
    )
}

/// Latent stage paths `id,t,s_true` and per-individual flags
/// `id,d_cf_true,baseline_late`.
pub fn write_truth(stages: &Path, flags: &Path, cohort: &SimulatedCohort) -> Result<()> {
    write_rows(
        stages,
        &header(&["id", "t", "s_true"]),
        cohort.truth.iter().flat_map(|tr| {
            tr.stages.iter().enumerate().map(move |(t, s)| {
                vec![tr.id.to_string(), (t + 1).to_string(), s.code().to_string()]
            })
        }),
    )?;
    write_rows(
        flags,
        &header(&["id", "d_cf_true", "baseline_late"]),
        cohort
            .truth
            .iter()
            .map(|t| vec![t.id.to_string(), flag(t.d_cf), flag(t.baseline_late)]),
    )
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(f))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: display(path),
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_err(path, line, format!("cannot parse {name} from '{raw}'")))
}

/// Reads a cohort. `horizon` is the follow-up length of undiagnosed
/// individuals; when absent it is the largest `t` in the panel.
pub fn read_cohort(
    baseline: &Path,
    panel: &Path,
    horizon: Option<usize>,
) -> Result<Vec<IndividualRecord>> {
    let mut rd = reader(baseline)?;
    let h = rd.headers().map_err(|e| csv_err(baseline, e))?.clone();
    if h.get(0) != Some("id") {
        return Err(parse_err(baseline, 1, "first column must be 'id'"));
    }
    let mut nx = 0;
    let mut na = 0;
    for (k, name) in h.iter().enumerate().skip(1) {
        let expected_x = format!("x{}", nx + 1);
        let expected_a = format!("a{}", na + 1);
        if na == 0 && name == expected_x {
            nx += 1;
        } else if name == expected_a {
            na += 1;
        } else {
            return Err(parse_err(
                baseline,
                1,
                format!(
                    "column {} is '{name}'; expected {expected_x} or {expected_a}",
                    k + 1
                ),
            ));
        }
    }
    let mut people: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(baseline, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id: u64 = field(baseline, line, "id", &row[0])?;
        let mut vals = Vec::with_capacity(nx + na);
        for k in 1..row.len() {
            vals.push(field::<f64>(baseline, line, &h[k], &row[k])?);
        }
        let a = vals.split_off(nx);
        if people.insert(id, (vals, a)).is_some() {
            return Err(parse_err(baseline, line, format!("duplicate id {id}")));
        }
    }

    let mut rd = reader(panel)?;
    let ph = rd.headers().map_err(|e| csv_err(panel, e))?.clone();
    if ph.iter().collect::<Vec<_>>() != ["id", "t", "r"] {
        return Err(parse_err(panel, 1, "header must be id,t,r"));
    }
    let mut obs: BTreeMap<u64, Vec<(usize, TestResult)>> = BTreeMap::new();
    let mut last: Option<(u64, usize)> = None;
    let mut max_t = 0;
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(panel, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id: u64 = field(panel, line, "id", &row[0])?;
        let t: usize = field(panel, line, "t", &row[1])?;
        let code: u8 = field(panel, line, "r", &row[2])?;
        let r = TestResult::from_code(code)
            .ok_or_else(|| parse_err(panel, line, format!("result code {code} not in 0..=3")))?;
        if t == 0 {
            return Err(parse_err(panel, line, "timepoints start at 1"));
        }
        if last.is_some_and(|prev| prev >= (id, t)) {
            return Err(parse_err(
                panel,
                line,
                "rows must be sorted by (id, t) without duplicates",
            ));
        }
        if !people.contains_key(&id) {
            return Err(parse_err(
                panel,
                line,
                format!("id {id} not in the baseline file"),
            ));
        }
        last = Some((id, t));
        max_t = max_t.max(t);
        obs.entry(id).or_default().push((t, r));
    }
    let horizon = horizon.unwrap_or(max_t);
    if horizon == 0 {
        return Err(parse_err(
            panel,
            1,
            "cannot infer the horizon from an empty panel",
        ));
    }

    let mut records = Vec::with_capacity(people.len());
    for (id, (x, a)) in people {
        let rows = obs.remove(&id).unwrap_or_default();
        let mut results = vec![TestResult::NoTest; horizon];
        let mut end = horizon;
        for &(t, r) in &rows {
            if t > horizon {
                return Err(Error::InvalidRecord {
                    id,
                    reason: format!("timepoint {t} beyond horizon {horizon}"),
                });
            }
            if t > end {
                return Err(Error::InvalidRecord {
                    id,
                    reason: format!("result at t={t} after diagnosis at t={end}"),
                });
            }
            results[t - 1] = r;
            if r.is_positive() {
                end = t;
            }
        }
        results.truncate(end);
        let rec = IndividualRecord::new(id, x, a, results);
        rec.validate(horizon)?;
        records.push(rec);
    }
    Ok(records)
}

/// `id,p_cf,factor_applied,d_observed,d_cf`, in input order.
pub fn write_imputed(path: &Path, result: &ImputationResult) -> Result<()> {
    write_rows(
        path,
        &header(&["id", "p_cf", "factor_applied", "d_observed", "d_cf"]),
        result.records.iter().map(|r| {
            vec![
                r.id.to_string(),
                r.p_cf.to_string(),
                opt(r.factor_applied),
                flag(r.d_observed),
                flag(r.d_cf),
            ]
        }),
    )
}

/// Reads the `id` and `d_cf` columns of an imputed-cohort file.
pub fn read_imputed_outcomes(path: &Path) -> Result<BTreeMap<u64, bool>> {
    let mut rd = reader(path)?;
    let h = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| {
        h.iter()
            .position(|c| c == name)
            .ok_or_else(|| parse_err(path, 1, format!("missing column {name}")))
    };
    let (ci, cd) = (col("id")?, col("d_cf")?);
    let mut out = BTreeMap::new();
    for row in rd.records() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id: u64 = field(path, line, "id", &row[ci])?;
        let d: u8 = field(path, line, "d_cf", &row[cd])?;
        if d > 1 {
            return Err(parse_err(path, line, "d_cf must be 0 or 1"));
        }
        out.insert(id, d == 1);
    }
    Ok(out)
}

/// Rows `(model, report)` in long format: `model,stratum,metric,mean,sd,n`,
/// with an empty SD for single evaluations.
pub fn write_metric_reports(path: &Path, reports: &[(String, &MetricsReport)]) -> Result<()> {
    write_rows(
        path,
        &header(&["model", "stratum", "metric", "mean", "sd", "n"]),
        reports.iter().flat_map(|(model, r)| {
            crate::prediction::ScalarMetrics::NAMES
                .iter()
                .zip(r.metrics.values())
                .map(move |(name, v)| {
                    vec![
                        model.clone(),
                        r.stratum.clone(),
                        name.to_string(),
                        v.to_string(),
                        String::new(),
                        "1".into(),
                    ]
                })
        }),
    )
}

pub fn write_metric_summaries(path: &Path, rows: &[MetricSummary]) -> Result<()> {
    write_rows(
        path,
        &header(&["model", "stratum", "metric", "mean", "sd", "n"]),
        rows.iter().map(|r| {
            vec![
                r.model.to_string(),
                r.stratum.clone(),
                r.metric.clone(),
                r.mean.to_string(),
                opt(r.sd),
                r.n.to_string(),
            ]
        }),
    )
}

pub fn write_deciles(path: &Path, reports: &[(String, &MetricsReport)]) -> Result<()> {
    write_rows(
        path,
        &header(&["model", "stratum", "bin", "mean_pred", "observed", "count"]),
        reports.iter().flat_map(|(model, r)| {
            r.deciles.iter().map(move |b| {
                vec![
                    model.clone(),
                    r.stratum.clone(),
                    b.bin.to_string(),
                    b.mean_pred.to_string(),
                    b.observed.to_string(),
                    b.count.to_string(),
                ]
            })
        }),
    )
}

pub fn write_averaged_deciles(path: &Path, rows: &[AveragedBin]) -> Result<()> {
    write_rows(
        path,
        &header(&["model", "stratum", "bin", "mean_pred", "observed", "count"]),
        rows.iter().map(|b| {
            vec![
                b.model.to_string(),
                b.stratum.clone(),
                b.bin.to_string(),
                b.mean_pred.to_string(),
                b.observed.to_string(),
                b.count.to_string(),
            ]
        }),
    )
}

pub fn write_net_benefit(path: &Path, reports: &[(String, &MetricsReport)]) -> Result<()> {
    write_rows(
        path,
        &header(&[
            "model",
            "stratum",
            "threshold",
            "net_benefit",
            "treat_all",
            "treat_none",
        ]),
        reports.iter().flat_map(|(model, r)| {
            r.net_benefit.iter().map(move |p| {
                vec![
                    model.clone(),
                    r.stratum.clone(),
                    p.threshold.to_string(),
                    p.model.to_string(),
                    p.treat_all.to_string(),
                    p.treat_none.to_string(),
                ]
            })
        }),
    )
}

pub fn write_averaged_net_benefit(path: &Path, rows: &[AveragedNetBenefit]) -> Result<()> {
    write_rows(
        path,
        &header(&[
            "model",
            "stratum",
            "threshold",
            "net_benefit",
            "treat_all",
            "treat_none",
        ]),
        rows.iter().map(|p| {
            vec![
                p.model.to_string(),
                p.stratum.clone(),
                p.threshold.to_string(),
                p.net_benefit.to_string(),
                p.treat_all.to_string(),
                p.treat_none.to_string(),
            ]
        }),
    )
}

/// `parameter,true_value,average_estimate,bias,empirical_se,mse,n`.
pub fn write_parameter_summary(path: &Path, rows: &[ParameterSummary]) -> Result<()> {
    write_rows(
        path,
        &header(&[
            "parameter",
            "true_value",
            "average_estimate",
            "bias",
            "empirical_se",
            "mse",
            "n",
        ]),
        rows.iter().map(|r| {
            vec![
                r.name.clone(),
                r.truth.to_string(),
                r.mean.to_string(),
                r.bias.to_string(),
                opt(r.empirical_se),
                r.mse.to_string(),
                r.n.to_string(),
            ]
        }),
    )
}

/// Per-replication incidence rows with a leading replication column.
pub fn write_incidence(path: &Path, rows: &[(usize, &IncidenceRow)]) -> Result<()> {
    write_rows(
        path,
        &header(&[
            "replication",
            "stratum",
            "n",
            "observed",
            "imputed",
            "mean_p_cf",
            "counterfactual_world",
        ]),
        rows.iter().map(|(rep, r)| {
            vec![
                rep.to_string(),
                r.stratum.clone(),
                r.n.to_string(),
                r.observed.to_string(),
                r.imputed.to_string(),
                r.mean_p_cf.to_string(),
                r.counterfactual_world.to_string(),
            ]
        }),
    )
}

pub fn write_trace(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    write_rows(
        path,
        &header(&["iteration", "log_likelihood", "gradient_norm"]),
        trace.iter().map(|e| {
            vec![
                e.iteration.to_string(),
                e.log_likelihood.to_string(),
                e.gradient_norm.to_string(),
            ]
        }),
    )
}

/// Free-form rows under a caller-supplied header.
pub fn write_table(
    path: &Path,
    columns: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    write_rows(path, &header(columns), rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e.to_string()))
}
