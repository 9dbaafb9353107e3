//! Maximum-likelihood fitting.

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::forward::forward_log_likelihood;
use super::lbfgs::{max_norm, minimize, LbfgsOptions};
use super::objective::Objective;
use crate::error::{Error, Result};
use crate::model::{
    logit, EmissionForm, EmissionModel, HazardModel, HmmParams, IndividualRecord, Parameterization,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    #[default]
    Adjoint,
    FiniteDifference,
}

/// Handling of records whose observed history has probability zero under
/// the model structure, such as a late-stage positive directly after a
/// negative test. They arise when data violate the perfect-test assumption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImpossibleRecords {
    #[default]
    Error,
    /// Leave them out of the likelihood and report their ids.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Tolerance on the max-norm of the gradient of the mean per-record
    /// negative log-likelihood.
    pub tol_g: f64,
    pub max_iter: usize,
    pub memory: usize,
    pub gradient: GradientMethod,
    /// When false the baseline late fraction stays at its initial value.
    pub late_fraction_free: bool,
    /// Extra starts from jittered initial values; the best log-likelihood wins.
    pub restarts: usize,
    pub jitter_sd: f64,
    pub seed: u64,
    pub record_trace: bool,
    pub impossible_records: ImpossibleRecords,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol_g: 1e-6,
            max_iter: 10_000,
            memory: 10,
            gradient: GradientMethod::Adjoint,
            late_fraction_free: true,
            restarts: 0,
            jitter_sd: 0.5,
            seed: 0,
            record_trace: false,
            impossible_records: ImpossibleRecords::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: HmmParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Max-norm of the mean per-record gradient at `theta_hat`.
    pub gradient_norm: f64,
    pub converged: bool,
    pub n_records: usize,
    /// Ids left out under [`ImpossibleRecords::Exclude`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HazardKind {
    #[default]
    Weibull,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmissionKind {
    #[default]
    GroupRates,
    LogisticShared,
}

/// Structure of a model to fit, from which default starting values follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_x: usize,
    pub n_a: usize,
    pub horizon: usize,
    #[serde(default)]
    pub hazard: HazardKind,
    #[serde(default)]
    pub emission: EmissionKind,
    #[serde(default = "yes")]
    pub constraint_late_ge_early: bool,
    #[serde(default = "yes")]
    pub late_fraction_free: bool,
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    /// Default initial values: testing rates 0.05, progression 0.1, late
    /// fraction 0.1 when free (0 otherwise), hazard coefficients 0, Weibull
    /// scale 0.01 and shape 1, piecewise baseline 0.01. With the late >= early
    /// constraint the late rate starts at 0.1, off the constraint boundary.
    pub fn default_init(&self) -> HmmParams {
        let coefficients = vec![0.0; self.n_x + self.n_a];
        let hazard = match self.hazard {
            HazardKind::Weibull => HazardModel::weibull(0.01, 1.0, coefficients, self.horizon),
            HazardKind::Piecewise => HazardModel::piecewise(vec![0.01; self.horizon], coefficients),
        };
        let late = if self.constraint_late_ge_early {
            0.1
        } else {
            0.05
        };
        let emission = match self.emission {
            EmissionKind::GroupRates => EmissionModel::group_rates(
                [0.05; 2],
                [0.05; 2],
                late,
                self.constraint_late_ge_early,
            ),
            EmissionKind::LogisticShared => {
                let mut c = vec![0.0; self.n_a + 1];
                c[0] = logit(0.05);
                EmissionModel::logistic_shared(c, late, self.constraint_late_ge_early)
            }
        };
        HmmParams {
            hazard,
            emission,
            progression: 0.1,
            baseline_late_fraction: if self.late_fraction_free { 0.1 } else { 0.0 },
        }
    }
}

/// Attaches the data's attribute support to the constraint and moves a late
/// rate sitting on or below the constraint boundary just inside it.
fn prepare_init(records: &[IndividualRecord], init: &HmmParams) -> HmmParams {
    let mut theta = init.clone();
    if theta.emission.constraint_late_ge_early {
        let mut support = EmissionModel::support_from(records.iter().map(|r| r.a.as_slice()));
        support.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
        theta.emission.constraint_support = support;
        if let EmissionForm::GroupRates { .. } = theta.emission.form {
            // levels outside {0, 1} would be rejected later with a clearer error
            theta
                .emission
                .constraint_support
                .retain(|a| a.len() == 1 && (a[0] == 0.0 || a[0] == 1.0));
        }
        let (m, _) = theta.emission.max_early_rate();
        if theta.emission.late_rate <= m {
            let moved = m + (1.0 - m) * 0.05;
            warn!(
                "initial late testing rate {} is not above the early maximum {m}; starting at {moved}",
                theta.emission.late_rate
            );
            theta.emission.late_rate = moved;
        }
    }
    theta
}

/// Fits the model by limited-memory quasi-Newton maximization of the cohort
/// log-likelihood over the unconstrained parameterization.
pub fn fit_mle(
    records: &[IndividualRecord],
    init: &HmmParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    init.validate()?;
    let template = prepare_init(records, init);
    let mut excluded = Vec::new();
    let kept: Vec<IndividualRecord>;
    let records = match opts.impossible_records {
        ImpossibleRecords::Error => records,
        ImpossibleRecords::Exclude => {
            // zero patterns do not depend on parameter values inside the open
            // intervals, so feasibility at the start is feasibility everywhere
            let mut k = Vec::with_capacity(records.len());
            for rec in records {
                match forward_log_likelihood(&template, rec) {
                    Err(Error::ImpossibleObservation { .. }) => excluded.push(rec.id),
                    Err(e) => return Err(e),
                    Ok(_) => k.push(rec.clone()),
                }
            }
            if !excluded.is_empty() {
                warn!(
                    "{} records with impossible histories left out of the fit",
                    excluded.len()
                );
            }
            kept = k;
            kept.as_slice()
        }
    };
    if records.is_empty() {
        return Err(Error::Empty("record set after exclusions"));
    }
    let param = Parameterization::new(template.clone(), opts.late_fraction_free)?;
    let objective = Objective::new(&param, records)?;
    let u0 = param.to_unconstrained(&template)?.theta_u;

    let mut best = run_once(&objective, u0.clone(), opts)?;
    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let jitter = Normal::new(0.0, opts.jitter_sd).map_err(|e| Error::Config(e.to_string()))?;
        for k in 0..opts.restarts {
            let start: Vec<f64> = u0.iter().map(|v| v + jitter.sample(&mut rng)).collect();
            match run_once(&objective, start, opts) {
                Ok(cand) => {
                    debug!("restart {k}: logL {}", cand.log_likelihood);
                    if cand.log_likelihood > best.log_likelihood {
                        best = cand;
                    }
                }
                Err(e) => warn!("restart {k} failed: {e}"),
            }
        }
    }
    best.excluded = excluded;
    info!(
        "fit: logL {:.6} after {} iterations, |grad| {:.3e}, converged {}",
        best.log_likelihood, best.iterations, best.gradient_norm, best.converged
    );
    Ok(best)
}

fn run_once(objective: &Objective<'_>, u0: Vec<f64>, opts: &FitOptions) -> Result<FitResult> {
    let n = objective.n_records() as f64;
    let method = opts.gradient;
    let eval = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (ll, g) = match method {
            GradientMethod::Adjoint => objective.value_and_gradient(u)?,
            GradientMethod::FiniteDifference => {
                (objective.value(u)?, objective.finite_difference(u, 1e-5)?)
            }
        };
        Ok((-ll / n, g.iter().map(|v| -v / n).collect()))
    };
    let lopts = LbfgsOptions {
        memory: opts.memory,
        max_iter: opts.max_iter,
        tol_g: opts.tol_g,
        ..LbfgsOptions::default()
    };
    let out = minimize(eval, u0, &lopts)?;
    if let Some(msg) = &out.message {
        warn!("optimizer stopped without convergence: {msg}");
    }
    let theta_hat = objective.param().decode(&out.x)?;
    Ok(FitResult {
        theta_hat,
        log_likelihood: -out.f * n,
        iterations: out.iterations,
        gradient_norm: max_norm(&out.g),
        converged: out.converged,
        n_records: objective.n_records(),
        excluded: Vec::new(),
        message: out.message,
        trace: opts.record_trace.then(|| {
            out.trace
                .iter()
                .map(|&(iteration, f, gn)| TraceEntry {
                    iteration,
                    log_likelihood: -f * n,
                    gradient_norm: gn,
                })
                .collect()
        }),
    })
}
