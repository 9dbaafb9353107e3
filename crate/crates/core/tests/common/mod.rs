//! Brute-force oracles, random instances and property checks shared by the
//! integration tests. Each check takes a seed and reports the first violation.

#![allow(dead_code)]

use cfhmm::counterfactual::{
    counterfactual_diagnosis_prob, impute_counterfactual_outcomes, smoothed_stage_posterior,
    ImputationOptions, ReferenceRegime,
};
use cfhmm::inference::forward_log_likelihood;
use cfhmm::model::{
    EmissionForm, EmissionModel, HazardFamily, HazardModel, HmmParams, IndividualRecord,
    Parameterization, TestResult,
};
use cfhmm::prediction::{auroc, net_benefit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Random group-rate parameters over one binary attribute and `n_x`
/// covariates, with hazards large enough to reach every stage quickly.
pub fn random_params(rng: &mut impl Rng, n_x: usize, horizon: usize) -> HmmParams {
    let coefs = (0..=n_x).map(|_| rng.random_range(-0.8..0.8)).collect();
    let mut r = || rng.random_range(0.02..0.6);
    let stage0 = [r(), r()];
    let stage1 = [r(), r()];
    let m = stage0.iter().chain(&stage1).cloned().fold(0.0, f64::max);
    HmmParams {
        hazard: HazardModel::weibull(
            rng.random_range(0.02..0.3),
            rng.random_range(0.5..2.5),
            coefs,
            horizon,
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

/// Random piecewise-baseline hazard with the shared logistic emission over
/// three binary attributes.
pub fn random_logistic_params(rng: &mut impl Rng, n_x: usize, horizon: usize) -> HmmParams {
    let baseline = (0..horizon).map(|_| rng.random_range(0.03..0.3)).collect();
    let coefs = (0..n_x + 3).map(|_| rng.random_range(-0.6..0.6)).collect();
    let mut em = EmissionModel::logistic_shared(
        std::iter::once(rng.random_range(-2.0..0.0))
            .chain((0..3).map(|_| rng.random_range(-1.0..0.5)))
            .collect(),
        rng.random_range(0.9..0.99),
        true,
    );
    em.constraint_support = attribute_support();
    HmmParams {
        hazard: HazardModel::piecewise(baseline, coefs),
        emission: em,
        progression: rng.random_range(0.05..0.6),
        baseline_late_fraction: rng.random_range(0.01..0.6),
    }
}

/// The attribute vectors drawn for logistic-emission records.
pub fn attribute_support() -> Vec<Vec<f64>> {
    (0..8u8)
        .map(|k| (0..3).map(|j| f64::from((k >> j) & 1)).collect())
        .collect()
}

/// Random record consistent with censoring and the progressive model: a late
/// positive never directly follows a negative test.
pub fn random_record(
    rng: &mut impl Rng,
    id: u64,
    n_x: usize,
    a: Vec<f64>,
    horizon: usize,
) -> IndividualRecord {
    let x = (0..n_x).map(|_| rng.random_range(-1.5..1.5)).collect();
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
            if len > 1 {
                results[len - 2] = TestResult::NoTest;
            }
            TestResult::LatePositive
        };
    }
    IndividualRecord::new(id, x, a, results)
}

pub fn binary_attribute(rng: &mut impl Rng) -> Vec<f64> {
    vec![f64::from(rng.random_range(0..2u8))]
}

/// Every stage path of length `len`.
pub fn all_paths(len: usize) -> Vec<Vec<usize>> {
    (0..len).fold(vec![vec![]], |acc, _| {
        acc.into_iter()
            .flat_map(|p| {
                (0..3).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect()
    })
}

/// Joint probability of a stage path and the record's results, built from the
/// model's published initial, transition and emission matrices.
pub fn path_weight(theta: &HmmParams, rec: &IndividualRecord, path: &[usize]) -> f64 {
    let mut w = theta.initial_state(&rec.x, &rec.a).unwrap()[path[0]];
    for t in 1..path.len() {
        w *= theta.transition_matrix(&rec.x, &rec.a, t + 1).unwrap()[path[t - 1]][path[t]];
    }
    let g = theta.emission_matrix(&rec.a).unwrap();
    for (t, r) in rec.results.iter().enumerate() {
        w *= g[path[t]][r.index()];
    }
    w
}

pub fn brute_likelihood(theta: &HmmParams, rec: &IndividualRecord) -> f64 {
    all_paths(rec.follow_up())
        .iter()
        .map(|p| path_weight(theta, rec, p))
        .sum()
}

pub fn brute_posterior(theta: &HmmParams, rec: &IndividualRecord) -> Vec<[f64; 3]> {
    let n = rec.follow_up();
    let mut rows = vec![[0.0; 3]; n];
    let mut total = 0.0;
    for p in all_paths(n) {
        let w = path_weight(theta, rec, &p);
        total += w;
        for t in 0..n {
            rows[t][p[t]] += w;
        }
    }
    for r in &mut rows {
        r.iter_mut().for_each(|v| *v /= total);
    }
    rows
}

/// Enumerates stage paths to `horizon` and every counterfactual result
/// sequence drawn from the reference emission matrix; diagnosis means any
/// positive result.
pub fn brute_p_cf(theta: &HmmParams, rec: &IndividualRecord, cf_a: &[f64], horizon: usize) -> f64 {
    let g = theta.emission_matrix(cf_a).unwrap();
    let seqs: Vec<Vec<usize>> = (0..horizon).fold(vec![vec![]], |acc, _| {
        acc.into_iter()
            .flat_map(|s| (0..4).map(move |r| [s.clone(), vec![r]].concat()))
            .collect()
    });
    let (mut num, mut den) = (0.0, 0.0);
    for path in all_paths(horizon) {
        let w = path_weight(theta, rec, &path);
        if w == 0.0 {
            continue;
        }
        den += w;
        let diag: f64 = seqs
            .iter()
            .filter(|s| s.iter().any(|&r| r == 1 || r == 2))
            .map(|s| (0..horizon).map(|t| g[path[t]][s[t]]).product::<f64>())
            .sum();
        num += w * diag;
    }
    num / den
}

/// Forward likelihood, smoothed posterior and counterfactual probability of a
/// random small instance against full enumeration.
pub fn check_oracle(seed: u64, tol: f64) -> Check {
    let mut rng = rng(seed);
    let horizon = rng.random_range(1..=4);
    let theta = random_params(&mut rng, 2, horizon);
    let a = binary_attribute(&mut rng);
    let rec = random_record(&mut rng, 1, 2, a, horizon);

    let ll = forward_log_likelihood(&theta, &rec).map_err(|e| e.to_string())?;
    let brute = brute_likelihood(&theta, &rec).ln();
    if rel_err(ll, brute) > tol {
        return Err(format!("log-likelihood {ll} vs {brute}"));
    }
    let post = smoothed_stage_posterior(&theta, &rec).map_err(|e| e.to_string())?;
    for (t, (a, b)) in post
        .rows
        .iter()
        .zip(brute_posterior(&theta, &rec))
        .enumerate()
    {
        for k in 0..3 {
            if (a[k] - b[k]).abs() > tol {
                return Err(format!(
                    "posterior t={} stage {k}: {} vs {}",
                    t + 1,
                    a[k],
                    b[k]
                ));
            }
        }
    }
    for h in rec.follow_up()..=horizon {
        let p = counterfactual_diagnosis_prob(&theta, &rec, &[0.0], h)
            .map_err(|e| e.to_string())?
            .p_cf;
        let b = brute_p_cf(&theta, &rec, &[0.0], h);
        if (p - b).abs() > tol {
            return Err(format!("p_cf to horizon {h}: {p} vs {b}"));
        }
    }
    Ok(())
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

fn random_any_params(rng: &mut ChaCha8Rng) -> HmmParams {
    let horizon = rng.random_range(1..=10);
    if rng.random_bool(0.5) {
        random_params(rng, 2, horizon)
    } else {
        random_logistic_params(rng, 2, horizon)
    }
}

fn attributes_for(theta: &HmmParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match theta.emission.form {
        EmissionForm::GroupRates { .. } => binary_attribute(rng),
        EmissionForm::LogisticShared { .. } => attribute_support()[rng.random_range(0..8)].clone(),
    }
}

/// Rows of the initial distribution, transition kernel and emission matrix
/// are probability vectors.
pub fn check_stochastic(seed: u64) -> Check {
    let mut rng = rng(seed);
    let theta = random_any_params(&mut rng);
    let a = attributes_for(&theta, &mut rng);
    let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
    let row_ok = |row: &[f64]| {
        row.iter().all(|p| (0.0..=1.0).contains(p))
            && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
    };
    let pi = theta.initial_state(&x, &a).map_err(|e| e.to_string())?;
    if !row_ok(&pi) {
        return Err(format!("initial state {pi:?}"));
    }
    for t in 1..=theta.horizon() {
        let q = theta
            .transition_matrix(&x, &a, t)
            .map_err(|e| e.to_string())?;
        if let Some(row) = q.iter().find(|r| !row_ok(&r[..])) {
            return Err(format!("transition row {row:?} at t={t}"));
        }
    }
    let g = theta.emission_matrix(&a).map_err(|e| e.to_string())?;
    if let Some(row) = g.iter().find(|r| !row_ok(&r[..])) {
        return Err(format!("emission row {row:?}"));
    }
    Ok(())
}

/// No regression, no skipped stage, and tests reveal the true stage.
pub fn check_zero_patterns(seed: u64) -> Check {
    let mut rng = rng(seed);
    let theta = random_any_params(&mut rng);
    let a = attributes_for(&theta, &mut rng);
    let x: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
    for t in 1..=theta.horizon() {
        let q = theta
            .transition_matrix(&x, &a, t)
            .map_err(|e| e.to_string())?;
        for (i, j) in [(0, 2), (1, 0), (2, 0), (2, 1)] {
            if q[i][j] != 0.0 {
                return Err(format!("transition {i}->{j} = {} at t={t}", q[i][j]));
            }
        }
        if q[2][2] != 1.0 {
            return Err(format!("late stage not absorbing at t={t}"));
        }
    }
    let g = theta.emission_matrix(&a).map_err(|e| e.to_string())?;
    for s in 0..3 {
        for r in 0..3 {
            if r != s && g[s][r] != 0.0 {
                return Err(format!("stage {s} emits result {r} with {}", g[s][r]));
            }
        }
    }
    Ok(())
}

/// Constrained to unconstrained and back recovers the parameters.
pub fn check_bijection(seed: u64) -> Check {
    let mut rng = rng(seed);
    let theta = random_any_params(&mut rng);
    let p = Parameterization::new(theta.clone(), true).map_err(|e| e.to_string())?;
    let u = p.to_unconstrained(&theta).map_err(|e| e.to_string())?;
    let back = p.from_unconstrained(&u).map_err(|e| e.to_string())?;
    for (i, (a, b)) in flatten(&theta).iter().zip(flatten(&back)).enumerate() {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(format!("component {i}: {a} -> {b}"));
        }
    }
    let u2 = p.to_unconstrained(&back).map_err(|e| e.to_string())?;
    for (i, (a, b)) in u.theta_u.iter().zip(&u2.theta_u).enumerate() {
        if (a - b).abs() > 1e-8 * a.abs().max(1.0) {
            return Err(format!("unconstrained component {i}: {a} -> {b}"));
        }
    }
    Ok(())
}

/// The posterior is one-hot wherever a test was taken, and P(S_t >= k) never
/// decreases over time.
pub fn check_posterior(seed: u64) -> Check {
    let mut rng = rng(seed);
    let horizon = rng.random_range(1..=10);
    let theta = random_params(&mut rng, 2, horizon);
    let a = binary_attribute(&mut rng);
    let rec = random_record(&mut rng, 1, 2, a, horizon);
    let post = smoothed_stage_posterior(&theta, &rec).map_err(|e| e.to_string())?;
    for (t, (row, r)) in post.rows.iter().zip(&rec.results).enumerate() {
        if (row.iter().sum::<f64>() - 1.0).abs() > 1e-10 || row.iter().any(|v| *v < 0.0) {
            return Err(format!("row {row:?} at t={}", t + 1));
        }
        if *r != TestResult::NoTest {
            let mut one_hot = [0.0; 3];
            one_hot[r.index()] = 1.0;
            if *row != one_hot {
                return Err(format!(
                    "tested row {row:?} at t={} with result {r:?}",
                    t + 1
                ));
            }
        }
    }
    for k in 1..3 {
        let ex = post.exceedance(k);
        if let Some(w) = ex.windows(2).find(|w| w[1] < w[0] - 1e-12) {
            return Err(format!("P(S >= {k}) drops from {} to {}", w[0], w[1]));
        }
    }
    Ok(())
}

fn random_cohort(rng: &mut ChaCha8Rng) -> (HmmParams, Vec<IndividualRecord>) {
    let horizon = rng.random_range(2..=10);
    let theta = random_params(rng, 2, horizon);
    let n = rng.random_range(20..120);
    let cohort = (0..n)
        .map(|i| {
            let a = binary_attribute(rng);
            random_record(rng, i, 2, a, horizon)
        })
        .collect();
    (theta, cohort)
}

/// Observed diagnoses survive imputation.
pub fn check_imputation_monotone(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (theta, cohort) = random_cohort(&mut rng);
    let opts = ImputationOptions {
        seed,
        ..Default::default()
    };
    let out = match impute_counterfactual_outcomes(
        &theta,
        &cohort,
        &ReferenceRegime::fixed(vec![0.0]),
        &opts,
    ) {
        Ok(o) => o,
        // a cohort without undiagnosed mass outside the reference group has no factor
        Err(cfhmm::Error::NoUndiagnosedMass(_)) => return Ok(()),
        Err(e) => return Err(e.to_string()),
    };
    match cohort
        .iter()
        .zip(&out.records)
        .find(|(r, i)| r.diagnosed && !i.d_cf)
    {
        Some((r, _)) => Err(format!("record {} lost its diagnosis", r.id)),
        None => Ok(()),
    }
}

/// Expected imputed incidence under the unclamped factor equals the mean
/// counterfactual probability of the recalibrated group.
pub fn check_incidence_identity(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (theta, cohort) = random_cohort(&mut rng);
    let out = match impute_counterfactual_outcomes(
        &theta,
        &cohort,
        &ReferenceRegime::fixed(vec![0.0]),
        &ImputationOptions::default(),
    ) {
        Ok(o) => o,
        Err(cfhmm::Error::NoUndiagnosedMass(_)) => return Ok(()),
        Err(e) => return Err(e.to_string()),
    };
    let Some(f) = out.factors.first() else {
        return Ok(());
    };
    let group: Vec<usize> = (0..cohort.len())
        .filter(|&i| !out.records[i].reference_member)
        .collect();
    let expected: f64 = group
        .iter()
        .map(|&i| {
            if cohort[i].diagnosed {
                1.0
            } else {
                f.recalibration.raw * out.records[i].p_cf
            }
        })
        .sum();
    let target: f64 = group.iter().map(|&i| out.records[i].p_cf).sum();
    if (expected - target).abs() > 1e-9 {
        return Err(format!(
            "imputed mass {expected} vs counterfactual mass {target}"
        ));
    }
    Ok(())
}

fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..80);
    // coarse grid so ties are common
    let pred: Vec<f64> = (0..n)
        .map(|_| f64::from(rng.random_range(1..20u8)) / 20.0)
        .collect();
    let mut outcome: Vec<bool> = pred.iter().map(|p| rng.random_bool(*p)).collect();
    outcome[0] = true;
    outcome[1] = false;
    (pred, outcome)
}

/// AUROC equals the concordant-pair fraction with ties counted half, and is
/// unchanged by a strictly increasing transform of the scores.
pub fn check_auroc(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (pred, outcome) = random_scores(&mut rng);
    let auc = auroc(&pred, &outcome).map_err(|e| e.to_string())?;
    let (mut pairs, mut score) = (0.0, 0.0);
    for (pi, oi) in pred.iter().zip(&outcome) {
        for (pj, oj) in pred.iter().zip(&outcome) {
            if *oi && !*oj {
                pairs += 1.0;
                score += if pi > pj {
                    1.0
                } else if pi == pj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if (auc - score / pairs).abs() > 1e-12 {
        return Err(format!("AUROC {auc} vs pair count {}", score / pairs));
    }
    let shift = rng.random_range(-2.0..2.0);
    let transformed: Vec<f64> = pred.iter().map(|p| (3.0 * p).exp() + shift).collect();
    let again = auroc(&transformed, &outcome).map_err(|e| e.to_string())?;
    if (auc - again).abs() > 1e-12 {
        return Err(format!(
            "AUROC {auc} changes to {again} under a monotone transform"
        ));
    }
    Ok(())
}

/// The treat-none strategy has zero net benefit at every threshold.
pub fn check_treat_none(seed: u64) -> Check {
    let mut rng = rng(seed);
    let (pred, outcome) = random_scores(&mut rng);
    let thresholds: Vec<f64> = (0..rng.random_range(1..30))
        .map(|_| rng.random_range(0.001..0.999))
        .collect();
    let nb = net_benefit(&pred, &outcome, &thresholds).map_err(|e| e.to_string())?;
    match nb.iter().find(|p| p.treat_none != 0.0) {
        Some(p) => Err(format!("treat-none {} at {}", p.treat_none, p.threshold)),
        None => Ok(()),
    }
}

/// Runs `check` on seeds `0..n`, stopping at the first failure.
pub fn run_cases(n: u64, check: impl Fn(u64) -> Check) -> Check {
    (0..n).try_for_each(|s| check(s).map_err(|e| format!("seed {s}: {e}")))
}
