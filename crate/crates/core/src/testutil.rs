//! Shared fixtures and brute-force oracles for unit tests.

use rand::Rng;

use crate::model::{
    emission_prob, initial_from, transition_from, EmissionForm, EmissionModel, HazardFamily,
    HazardModel, HmmParams, IndividualRecord, TestResult,
};

pub fn scenario1_truth() -> HmmParams {
    HmmParams {
        hazard: HazardModel::weibull(0.005, 1.5, vec![0.5, -0.25, 0.25], 10),
        emission: EmissionModel::group_rates([0.025, 0.01], [0.1, 0.05], 0.3, true),
        progression: 0.1,
        baseline_late_fraction: 0.0,
    }
}

/// Random valid group-rate parameters with hazards large enough that every
/// stage is reachable within a few timepoints.
pub fn random_params(rng: &mut impl Rng, n_x: usize, n_a: usize) -> HmmParams {
    let coefs = (0..n_x + n_a)
        .map(|_| rng.random_range(-0.8..0.8))
        .collect();
    let r = |rng: &mut dyn rand::RngCore| rng.random_range(0.02..0.6);
    let stage0 = [r(rng), r(rng)];
    let stage1 = [r(rng), r(rng)];
    let m = stage0.iter().chain(&stage1).cloned().fold(0.0, f64::max);
    HmmParams {
        hazard: HazardModel::weibull(
            rng.random_range(0.02..0.3),
            rng.random_range(0.5..2.5),
            coefs,
            rng.random_range(3..=10),
        ),
        emission: EmissionModel::group_rates(
            stage0,
            stage1,
            m + (1.0 - m) * rng.random_range(0.05..0.95),
            true,
        ),
        progression: rng.random_range(0.05..0.6),
        baseline_late_fraction: rng.random_range(0.01..0.6),
    }
}

pub fn flatten(theta: &HmmParams) -> Vec<f64> {
    let mut v = theta.hazard.coefficients.clone();
    match &theta.hazard.family {
        HazardFamily::Weibull { scale, shape } => v.extend([*scale, *shape]),
        HazardFamily::PiecewiseBaseline { baseline } => v.extend(baseline),
    }
    match &theta.emission.form {
        EmissionForm::GroupRates {
            stage0_rates,
            stage1_rates,
        } => v.extend(stage0_rates.iter().chain(stage1_rates)),
        EmissionForm::LogisticShared { coefficients } => v.extend(coefficients),
    }
    v.extend([
        theta.emission.late_rate,
        theta.progression,
        theta.baseline_late_fraction,
    ]);
    v
}

/// Random record consistent with censoring rules, of follow-up `len` when
/// diagnosed at the end or `horizon` otherwise.
pub fn random_record(rng: &mut impl Rng, id: u64, n_x: usize, horizon: usize) -> IndividualRecord {
    let x = (0..n_x).map(|_| rng.random_range(-1.5..1.5)).collect();
    let a = vec![f64::from(rng.random_range(0..2u8))];
    let diagnosed = rng.random_bool(0.5);
    let len = if diagnosed {
        rng.random_range(1..=horizon)
    } else {
        horizon
    };
    let mut results: Vec<TestResult> = (0..len)
        .map(|_| {
            if rng.random_bool(0.3) {
                TestResult::Negative
            } else {
                TestResult::NoTest
            }
        })
        .collect();
    if diagnosed {
        results[len - 1] = if rng.random_bool(0.5) {
            TestResult::EarlyPositive
        } else {
            // a late stage cannot directly follow a negative test
            if len > 1 {
                results[len - 2] = TestResult::NoTest;
            }
            TestResult::LatePositive
        };
    }
    IndividualRecord::new(id, x, a, results)
}

/// Joint probability of a latent path and the observed results (up to the
/// path's length covering the record) under the model.
pub fn path_weight(theta: &HmmParams, rec: &IndividualRecord, path: &[usize]) -> f64 {
    let h = |t: usize| theta.hazard.evaluate(&rec.x, &rec.a, t).unwrap();
    let rates = theta.emission.stage_rates(&rec.a).unwrap();
    let mut w = initial_from(h(1), theta.baseline_late_fraction)[path[0]];
    for t in 1..path.len() {
        w *= transition_from(h(t + 1), theta.progression)[path[t - 1]][path[t]];
    }
    for (t, r) in rec.results.iter().enumerate() {
        w *= emission_prob(&rates, path[t], *r);
    }
    w
}

/// All stage paths of length `len`.
pub fn all_paths(len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..3).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

/// Brute-force marginal likelihood by summing over every latent path.
pub fn brute_force_likelihood(theta: &HmmParams, rec: &IndividualRecord) -> f64 {
    all_paths(rec.follow_up())
        .iter()
        .map(|p| path_weight(theta, rec, p))
        .sum()
}

/// Draws one record from the model itself, so fits on such data have an
/// interior optimum.
pub fn sample_record(
    rng: &mut impl Rng,
    theta: &HmmParams,
    id: u64,
    n_x: usize,
) -> IndividualRecord {
    let x: Vec<f64> = (0..n_x).map(|_| rng.random_range(-1.5..1.5)).collect();
    let a = vec![f64::from(rng.random_range(0..2u8))];
    let rates = theta.emission.stage_rates(&a).unwrap();
    let mut results = Vec::new();
    let mut stage = 0;
    for t in 1..=theta.horizon() {
        let h = theta.hazard.evaluate(&x, &a, t).unwrap();
        let probs = if t == 1 {
            initial_from(h, theta.baseline_late_fraction)
        } else {
            transition_from(h, theta.progression)[stage]
        };
        let u: f64 = rng.random();
        stage = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        };
        if rng.random_bool(rates[stage]) {
            let r = TestResult::from_code(stage as u8).unwrap();
            results.push(r);
            if r.is_positive() {
                break;
            }
        } else {
            results.push(TestResult::NoTest);
        }
    }
    IndividualRecord::new(id, x, a, results)
}
