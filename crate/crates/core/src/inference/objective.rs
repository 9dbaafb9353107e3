//! Cohort log-likelihood and its gradient on the unconstrained scale.
//!
//! Records are processed in ascending id order, in fixed-size chunks whose
//! partial sums are added sequentially, so the result does not depend on the
//! input order or on the thread schedule.

use rayon::prelude::*;

use super::forward::{forward_log_likelihood, AdjointScratch, RecordKernel};
use crate::error::{Error, Result};
use crate::model::{
    expit, EmissionForm, HazardFamily, HmmParams, IndividualRecord, Parameterization,
    UnconstrainedParams, HAZARD_EPS,
};

const CHUNK: usize = 256;

fn sorted_by_id(records: &[IndividualRecord]) -> Vec<&IndividualRecord> {
    let mut v: Vec<&IndividualRecord> = records.iter().collect();
    v.sort_by_key(|r| r.id);
    v
}

/// Sum of per-record log-likelihoods.
pub fn dataset_log_likelihood(theta: &HmmParams, records: &[IndividualRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("record set"));
    }
    let sorted = sorted_by_id(records);
    let partial: Vec<Result<f64>> = sorted
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut s = 0.0;
            for rec in chunk {
                s += forward_log_likelihood(theta, rec)?;
            }
            Ok(s)
        })
        .collect();
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total)
}

/// Gradient of the cohort log-likelihood with respect to the unconstrained vector.
pub fn log_likelihood_gradient(
    param: &Parameterization,
    u: &UnconstrainedParams,
    records: &[IndividualRecord],
) -> Result<Vec<f64>> {
    Ok(Objective::new(param, records)?
        .value_and_gradient(&u.theta_u)?
        .1)
}

/// Central finite-difference gradient of the cohort log-likelihood.
pub fn finite_difference_gradient(
    param: &Parameterization,
    u: &UnconstrainedParams,
    records: &[IndividualRecord],
    step: f64,
) -> Result<Vec<f64>> {
    let obj = Objective::new(param, records)?;
    obj.finite_difference(&u.theta_u, step)
}

/// Log-likelihood as a function of the unconstrained vector for a fixed cohort.
pub struct Objective<'a> {
    param: &'a Parameterization,
    records: Vec<&'a IndividualRecord>,
    max_len: usize,
}

struct Partial {
    ll: f64,
    grad: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(param: &'a Parameterization, records: &'a [IndividualRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("record set"));
        }
        let template = param.template();
        let n_cov = template.hazard.n_coefficients();
        let n_a = template.emission.n_attributes();
        for rec in records {
            rec.validate(template.horizon())?;
            if rec.x.len() + rec.a.len() != n_cov {
                return Err(Error::DimensionMismatch {
                    what: "hazard covariates (x, a)",
                    expected: n_cov,
                    found: rec.x.len() + rec.a.len(),
                });
            }
            if rec.a.len() != n_a {
                return Err(Error::DimensionMismatch {
                    what: "observability attributes a",
                    expected: n_a,
                    found: rec.a.len(),
                });
            }
        }
        let max_len = records.iter().map(|r| r.follow_up()).max().unwrap_or(0);
        Ok(Self {
            param,
            records: sorted_by_id(records),
            max_len,
        })
    }

    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn param(&self) -> &Parameterization {
        self.param
    }

    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let theta = self.param.decode(u)?;
        let partial: Vec<Result<f64>> = self
            .records
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut s = 0.0;
                let mut hz = Vec::with_capacity(self.max_len);
                for rec in chunk {
                    s += kernel_value(&theta, rec, &mut hz)?;
                }
                Ok(s)
            })
            .collect();
        let mut total = 0.0;
        for p in partial {
            total += p?;
        }
        Ok(total)
    }

    /// Log-likelihood and its gradient by reverse-mode differentiation of the
    /// forward recursion.
    pub fn value_and_gradient(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let theta = self.param.decode(u)?;
        let p = self.param;
        let dim = p.dim();
        let hz_model = &theta.hazard;
        let time_factor: Vec<f64> = (1..=self.max_len)
            .map(|t| hz_model.time_factor(t))
            .collect();
        let log_shape_factor: Vec<f64> = match &hz_model.family {
            HazardFamily::Weibull { shape, .. } => (1..=self.max_len)
                .map(|t| 1.0 + shape * (t as f64 / hz_model.horizon as f64).ln())
                .collect(),
            HazardFamily::PiecewiseBaseline { .. } => Vec::new(),
        };
        let n_baseline = p.hazard_time.len();

        let partial: Vec<Result<Partial>> = self
            .records
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut out = Partial {
                    ll: 0.0,
                    grad: vec![0.0; dim],
                };
                let mut scratch = AdjointScratch::default();
                let mut z: Vec<f64> = Vec::new();
                for rec in chunk {
                    z.clear();
                    z.extend(rec.x.iter().chain(&rec.a));
                    let eta = hz_model.linear_predictor(&rec.x, &rec.a)?;
                    let exp_eta = eta.exp();
                    let n = rec.follow_up();
                    let mut hazards = std::mem::take(&mut scratch.hazards);
                    hazards.clear();
                    hazards.extend(
                        time_factor[..n]
                            .iter()
                            .map(|tf| (tf * exp_eta).clamp(0.0, 1.0 - HAZARD_EPS)),
                    );
                    let rates = theta.emission.stage_rates(&rec.a)?;
                    let kernel = RecordKernel {
                        id: rec.id,
                        results: &rec.results,
                        hazards: &hazards,
                        rates,
                        progression: theta.progression,
                        late_fraction: theta.baseline_late_fraction,
                    };
                    let adj = kernel.log_likelihood_adjoint(&mut scratch)?;
                    out.ll += adj.log_likelihood;

                    let g = &mut out.grad;
                    let mut eta_bar = 0.0;
                    for t in 0..n {
                        let raw = time_factor[t] * exp_eta;
                        if raw >= 1.0 - HAZARD_EPS {
                            continue;
                        }
                        // d h / d ln(time factor) = d h / d eta = h
                        let d = adj.hazard[t] * hazards[t];
                        eta_bar += d;
                        match &hz_model.family {
                            HazardFamily::Weibull { .. } => {
                                g[p.hazard_time.start] += d;
                                g[p.hazard_time.start + 1] += d * log_shape_factor[t];
                            }
                            HazardFamily::PiecewiseBaseline { .. } => {
                                g[p.hazard_time.start + t.min(n_baseline - 1)] += d;
                            }
                        }
                    }
                    for (j, zj) in z.iter().enumerate() {
                        g[j] += eta_bar * zj;
                    }
                    let e = p.emission.start;
                    match &theta.emission.form {
                        EmissionForm::GroupRates { .. } => {
                            let l = rec.a[0] as usize;
                            g[e + l] += adj.rates[0] * rates[0] * (1.0 - rates[0]);
                            g[e + 2 + l] += adj.rates[1] * rates[1] * (1.0 - rates[1]);
                        }
                        EmissionForm::LogisticShared { .. } => {
                            let b = rates[0];
                            let bb = (adj.rates[0] + adj.rates[1]) * b * (1.0 - b);
                            g[e] += bb;
                            for (j, aj) in rec.a.iter().enumerate() {
                                g[e + 1 + j] += bb * aj;
                            }
                        }
                    }
                    // raw adjoints; mapped to the unconstrained scale after reduction
                    g[p.late] += adj.rates[2];
                    g[p.progression] += adj.progression;
                    if let Some(i) = p.late_fraction {
                        g[i] += adj.late_fraction;
                    }
                    scratch.recycle(adj);
                    scratch.hazards = hazards;
                }
                Ok(out)
            })
            .collect();

        let mut ll = 0.0;
        let mut grad = vec![0.0; dim];
        for part in partial {
            let part = part?;
            ll += part.ll;
            for (g, v) in grad.iter_mut().zip(&part.grad) {
                *g += v;
            }
        }

        let late_bar = grad[p.late];
        if theta.emission.constraint_late_ge_early {
            let s = expit(u[p.late]);
            let (m, dm) = theta.emission.max_early_rate();
            grad[p.late] = late_bar * (1.0 - m) * s * (1.0 - s);
            for (k, d) in dm {
                grad[p.emission.start + k] += late_bar * (1.0 - s) * d;
            }
        } else {
            let r = theta.emission.late_rate;
            grad[p.late] = late_bar * r * (1.0 - r);
        }
        let q = theta.progression;
        grad[p.progression] *= q * (1.0 - q);
        if let Some(i) = p.late_fraction {
            let f = theta.baseline_late_fraction;
            grad[i] *= f * (1.0 - f);
        }
        if !ll.is_finite() {
            return Err(Error::NonFinite {
                context: "cohort log-likelihood".into(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok((ll, grad))
    }

    /// Central differences with per-coordinate step `step`.
    pub fn finite_difference(&self, u: &[f64], step: f64) -> Result<Vec<f64>> {
        let mut grad = Vec::with_capacity(u.len());
        let mut probe = u.to_vec();
        for i in 0..u.len() {
            probe[i] = u[i] + step;
            let up = self.value(&probe)?;
            probe[i] = u[i] - step;
            let down = self.value(&probe)?;
            probe[i] = u[i];
            let g = (up - down) / (2.0 * step);
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient { index: i });
            }
            grad.push(g);
        }
        Ok(grad)
    }
}

fn kernel_value(theta: &HmmParams, rec: &IndividualRecord, hz: &mut Vec<f64>) -> Result<f64> {
    let eta = theta.hazard.linear_predictor(&rec.x, &rec.a)?;
    theta.hazard.sequence(eta.exp(), rec.follow_up(), hz);
    let rates = theta.emission.stage_rates(&rec.a)?;
    RecordKernel {
        id: rec.id,
        results: &rec.results,
        hazards: hz,
        rates,
        progression: theta.progression,
        late_fraction: theta.baseline_late_fraction,
    }
    .log_likelihood()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestResult::*;
    use crate::model::{EmissionModel, HazardModel};
    use crate::testutil::{random_params, random_record, scenario1_truth};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_gradient(param: &Parameterization, u: &[f64], records: &[IndividualRecord]) {
        let obj = Objective::new(param, records).unwrap();
        let (_, g) = obj.value_and_gradient(u).unwrap();
        let fd = obj.finite_difference(u, 1e-5).unwrap();
        for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
            if a.abs().max(b.abs()) > 1e-6 {
                let rel = (a - b).abs() / a.abs().max(b.abs());
                assert!(
                    rel <= 1e-4,
                    "component {i} ({}): {a} vs {b}",
                    param.labels()[i]
                );
            }
        }
    }

    #[test]
    fn identical_records_double() {
        let theta = scenario1_truth();
        let rec = IndividualRecord::new(1, vec![0.3, -0.2], vec![1.0], vec![NoTest; 10]);
        let mut twin = rec.clone();
        twin.id = 2;
        let one = dataset_log_likelihood(&theta, std::slice::from_ref(&rec)).unwrap();
        let two = dataset_log_likelihood(&theta, &[rec, twin]).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let theta = random_params(&mut rng, 2, 1);
        let mut recs: Vec<_> = (0..1000)
            .map(|i| random_record(&mut rng, i, 2, theta.horizon()))
            .collect();
        let a = dataset_log_likelihood(&theta, &recs).unwrap();
        recs.reverse();
        let b = dataset_log_likelihood(&theta, &recs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjoint_matches_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = random_params(&mut rng, 2, 1);
        let recs: Vec<_> = (0..300)
            .map(|i| random_record(&mut rng, i, 2, theta.horizon()))
            .collect();
        let p = Parameterization::new(theta.clone(), true).unwrap();
        let u = p.to_unconstrained(&theta).unwrap();
        let obj = Objective::new(&p, &recs).unwrap();
        let (v, _) = obj.value_and_gradient(&u.theta_u).unwrap();
        let direct = dataset_log_likelihood(&theta, &recs).unwrap();
        assert!((v - direct).abs() <= 1e-9 * direct.abs());
    }

    #[test]
    fn gradient_group_weibull() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 0..5 {
            let theta = random_params(&mut rng, 2, 1);
            let recs: Vec<_> = (0..200)
                .map(|i| random_record(&mut rng, i, 2, theta.horizon()))
                .collect();
            let mut template = theta.clone();
            template.emission.constraint_late_ge_early = k % 2 == 0;
            let p = Parameterization::new(template, k % 3 != 0).unwrap();
            let u = p.to_unconstrained(&theta).unwrap();
            check_gradient(&p, &u.theta_u, &recs);
        }
    }

    #[test]
    fn gradient_piecewise_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..4 {
            let horizon = 6;
            let baseline: Vec<f64> = (0..horizon).map(|_| rng.random_range(0.05..0.3)).collect();
            let coefs: Vec<f64> = (0..5).map(|_| rng.random_range(-0.5..0.5)).collect();
            let mut em = EmissionModel::logistic_shared(vec![-1.0, 0.5, -0.7, 0.3], 0.5, true);
            em.constraint_support = vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 0.0, 1.0],
                vec![0.0, 1.0, 1.0],
            ];
            let theta = HmmParams {
                hazard: HazardModel::piecewise(baseline, coefs),
                emission: em,
                progression: 0.3,
                baseline_late_fraction: 0.2,
            };
            let support = theta.emission.constraint_support.clone();
            let recs: Vec<_> = (0..200)
                .map(|i| {
                    let mut r = random_record(&mut rng, i, 2, horizon);
                    r.a = support[rng.random_range(0..support.len())].clone();
                    r
                })
                .collect();
            let p = Parameterization::new(theta.clone(), true).unwrap();
            let u = p.to_unconstrained(&theta).unwrap();
            check_gradient(&p, &u.theta_u, &recs);
        }
    }

    #[test]
    fn unsupported_late_rate_has_zero_gradient() {
        let mut theta = scenario1_truth();
        theta.emission.constraint_late_ge_early = false;
        let recs: Vec<_> = (0..50)
            .map(|i| IndividualRecord::new(i, vec![0.1, 0.2], vec![(i % 2) as f64], vec![NoTest]))
            .collect();
        theta.hazard.horizon = 1;
        let p = Parameterization::new(theta.clone(), false).unwrap();
        let u = p.to_unconstrained(&theta).unwrap();
        let g = log_likelihood_gradient(&p, &u, &recs).unwrap();
        assert!(g[p.late].abs() <= 1e-8);
    }
}
