//! Smoothed stage posteriors and counterfactual diagnosis probabilities.
//!
//! The counterfactual asks whether an individual would have been diagnosed by
//! the horizon had their tests followed the reference group's rates. The
//! latent disease path is unchanged by the intervention, so its posterior
//! given the factual history is reused; counterfactual tests are drawn from
//! the reference emission matrix independently of the factual ones.

mod impute;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{record_inputs, ForwardTrace, RecordKernel};
use crate::model::{HmmParams, IndividualRecord};

pub use impute::{
    impute_counterfactual_outcomes, recalibration_factor, recalibration_factor_from_means,
    FactorStrata, ImputationOptions, ImputationResult, ImputedRecord, Recalibration, StratumFactor,
};

/// P(S_t = i | x, a, r_1..T_n) for t = 1..T_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTrajectory {
    pub id: u64,
    pub rows: Vec<[f64; 3]>,
}

impl PosteriorTrajectory {
    /// P(S_t >= k) at every timepoint.
    pub fn exceedance(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k..].iter().sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub p_cf: f64,
    /// P(diagnosed at t | not diagnosed before t, history) for t = 1..T.
    pub hazard: Vec<f64>,
    /// P(not diagnosed by t | history) for t = 1..T.
    pub survivor: Vec<f64>,
}

/// Testing regime applied in the counterfactual. Each attribute is either set
/// to a fixed level or left at the individual's own value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRegime {
    pub attributes: Vec<Option<f64>>,
}

impl ReferenceRegime {
    /// Every attribute set to the given level.
    pub fn fixed(levels: Vec<f64>) -> Self {
        Self {
            attributes: levels.into_iter().map(Some).collect(),
        }
    }

    /// Attribute vector governing the counterfactual emissions of `a`.
    pub fn apply(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.attributes.len() {
            return Err(Error::Reference(format!(
                "regime covers {} attributes, record has {}",
                self.attributes.len(),
                a.len()
            )));
        }
        Ok(self
            .attributes
            .iter()
            .zip(a)
            .map(|(r, v)| r.unwrap_or(*v))
            .collect())
    }

    /// True when the individual's factual regime already is the reference.
    pub fn contains(&self, a: &[f64]) -> Result<bool> {
        Ok(self.apply(a)? == a)
    }
}

struct RecordPass {
    trace: ForwardTrace,
    hazards: Vec<f64>,
}

fn forward_pass(theta: &HmmParams, rec: &IndividualRecord, len: usize) -> Result<RecordPass> {
    let mut hazards = Vec::with_capacity(len);
    let rates = record_inputs(theta, rec, &rec.a, len, &mut hazards)?;
    let trace = RecordKernel {
        id: rec.id,
        results: &rec.results,
        hazards: &hazards,
        rates,
        progression: theta.progression,
        late_fraction: theta.baseline_late_fraction,
    }
    .trace()?;
    Ok(RecordPass { trace, hazards })
}

/// Backward smoothing from the stored forward quantities.
fn smooth(pass: &RecordPass, progression: f64) -> Vec<[f64; 3]> {
    let tr = &pass.trace;
    let n = tr.filtered.len();
    let mut rows = vec![[0.0; 3]; n];
    rows[n - 1] = tr.filtered[n - 1];
    for t in (0..n - 1).rev() {
        let q = transition(pass.hazards[t + 1], progression);
        let pred = &tr.states[t + 1].stage_given_past;
        let phi = &tr.filtered[t];
        let next = rows[t + 1];
        let mut row = [0.0; 3];
        for j in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                if pred[i] > 0.0 && q[j][i] > 0.0 {
                    acc += q[j][i] * next[i] / pred[i];
                }
            }
            row[j] = phi[j] * acc;
        }
        let s: f64 = row.iter().sum();
        if s > 0.0 {
            row.iter_mut().for_each(|v| *v /= s);
        }
        rows[t] = row;
    }
    rows
}

#[inline]
fn transition(h: f64, q: f64) -> [[f64; 3]; 3] {
    [[1.0 - h, h, 0.0], [0.0, 1.0 - q, q], [0.0, 0.0, 1.0]]
}

/// Posterior stage distribution at every timepoint given the full history.
pub fn smoothed_stage_posterior(
    theta: &HmmParams,
    rec: &IndividualRecord,
) -> Result<PosteriorTrajectory> {
    rec.validate(theta.horizon())?;
    let pass = forward_pass(theta, rec, rec.follow_up())?;
    Ok(PosteriorTrajectory {
        id: rec.id,
        rows: smooth(&pass, theta.progression),
    })
}

/// Probability of a diagnosis by `horizon` had the individual's tests
/// followed the emission regime of the attribute vector `cf_attributes`.
///
/// Up to the end of follow-up the latent path evolves under its posterior
/// given the factual history; afterwards it evolves under the model's
/// transition kernel. Hazards always use the individual's own covariates.
pub fn counterfactual_diagnosis_prob(
    theta: &HmmParams,
    rec: &IndividualRecord,
    cf_attributes: &[f64],
    horizon: usize,
) -> Result<CounterfactualResult> {
    let n = rec.follow_up();
    if n == 0 {
        return Err(Error::InvalidRecord {
            id: rec.id,
            reason: "empty test history".into(),
        });
    }
    if horizon < n || horizon > theta.horizon() {
        return Err(Error::TimeOutOfRange {
            t: horizon,
            horizon: theta.horizon(),
        });
    }
    let cf_rates = theta
        .emission
        .stage_rates(cf_attributes)
        .map_err(|e| match e {
            Error::DimensionMismatch {
                expected, found, ..
            } => Error::Reference(format!(
                "reference attribute vector has length {found}, emission model expects {expected}"
            )),
            other => Error::Reference(other.to_string()),
        })?;
    let pass = forward_pass(theta, rec, horizon)?;
    let gamma = smooth(&pass, theta.progression);
    let tr = &pass.trace;
    // probability that each stage yields no positive counterfactual test
    let stay = [1.0, 1.0 - cf_rates[1], 1.0 - cf_rates[2]];

    let mut kappa = gamma[0];
    let mut hazard = Vec::with_capacity(horizon);
    let mut survivor = Vec::with_capacity(horizon);
    let mut surv = 1.0;
    for t in 0..horizon {
        if t > 0 {
            let mut nu = [kappa[0] * stay[0], kappa[1] * stay[1], kappa[2] * stay[2]];
            let s: f64 = nu.iter().sum();
            if s > 0.0 {
                nu.iter_mut().for_each(|v| *v /= s);
            }
            let q = transition(pass.hazards[t], theta.progression);
            let mut next = [0.0; 3];
            if t < n {
                let pred = &tr.states[t].stage_given_past;
                let phi = &tr.filtered[t - 1];
                for i in 0..3 {
                    if nu[i] == 0.0 || gamma[t - 1][i] <= 0.0 {
                        continue;
                    }
                    for j in 0..3 {
                        if q[i][j] > 0.0 && pred[j] > 0.0 {
                            let p = q[i][j] * phi[i] / pred[j] * gamma[t][j] / gamma[t - 1][i];
                            next[j] += nu[i] * p;
                        }
                    }
                }
            } else {
                for i in 0..3 {
                    for j in 0..3 {
                        next[j] += nu[i] * q[i][j];
                    }
                }
            }
            let s: f64 = next.iter().sum();
            if s > 0.0 {
                next.iter_mut().for_each(|v| *v /= s);
            }
            kappa = next;
        }
        let lambda = kappa[1] * cf_rates[1] + kappa[2] * cf_rates[2];
        surv *= 1.0 - lambda;
        hazard.push(lambda);
        survivor.push(surv);
    }
    Ok(CounterfactualResult {
        p_cf: 1.0 - surv,
        hazard,
        survivor,
    })
}

/// The same quantity under the individual's own testing regime.
pub fn factual_diagnosis_prob(
    theta: &HmmParams,
    rec: &IndividualRecord,
    horizon: usize,
) -> Result<CounterfactualResult> {
    counterfactual_diagnosis_prob(theta, rec, &rec.a, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestResult::{self, *};
    use crate::model::{emission_from, EmissionModel, HazardModel};
    use crate::testutil::{all_paths, path_weight, random_params, random_record, scenario1_truth};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    fn brute_posterior(theta: &HmmParams, rec: &IndividualRecord) -> Vec<[f64; 3]> {
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

    /// Enumerates latent paths to the horizon and every counterfactual test
    /// sequence; the individual is diagnosed if any counterfactual test is positive.
    fn brute_p_cf(theta: &HmmParams, rec: &IndividualRecord, cf_a: &[f64], horizon: usize) -> f64 {
        let g = emission_from(theta.emission.stage_rates(cf_a).unwrap());
        let mut num = 0.0;
        let mut den = 0.0;
        let mut seqs: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..horizon {
            seqs = seqs
                .into_iter()
                .flat_map(|s| (0..4).map(move |r| [s.clone(), vec![r]].concat()))
                .collect();
        }
        for path in all_paths(horizon) {
            let w = path_weight(theta, rec, &path);
            if w == 0.0 {
                continue;
            }
            den += w;
            let mut diag = 0.0;
            for s in &seqs {
                let mut pr = 1.0;
                for t in 0..horizon {
                    pr *= g[path[t]][s[t]];
                }
                if s.iter().any(|&r| r == 1 || r == 2) {
                    diag += pr;
                }
            }
            num += w * diag;
        }
        num / den
    }

    fn small_case(rng: &mut ChaCha8Rng) -> (HmmParams, IndividualRecord) {
        let mut theta = random_params(rng, 2, 1);
        theta.hazard.horizon = rng.random_range(1..=4);
        let rec = random_record(rng, 1, 2, theta.horizon());
        (theta, rec)
    }

    #[test]
    fn single_step_no_test_posterior() {
        let theta = HmmParams {
            hazard: HazardModel::piecewise(vec![0.1], vec![0.0]),
            emission: EmissionModel::group_rates([0.025, 0.01], [0.1, 0.05], 0.3, true),
            progression: 0.1,
            baseline_late_fraction: 0.0,
        };
        let rec = IndividualRecord::new(1, vec![], vec![0.0], vec![NoTest]);
        let post = smoothed_stage_posterior(&theta, &rec).unwrap();
        let z = 0.9 * 0.975 + 0.1 * 0.9;
        let expect = [0.9 * 0.975 / z, 0.1 * 0.9 / z, 0.0];
        for i in 0..3 {
            assert!((post.rows[0][i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tested_final_row_is_one_hot() {
        let theta = scenario1_truth();
        let rec = IndividualRecord::new(
            1,
            vec![0.0, 0.0],
            vec![0.0],
            vec![NoTest, Negative, NoTest, EarlyPositive],
        );
        let post = smoothed_stage_posterior(&theta, &rec).unwrap();
        assert_eq!(post.rows[3], [0.0, 1.0, 0.0]);
        assert_eq!(post.rows[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn scenario1_posterior_matches_enumeration() {
        let theta = scenario1_truth();
        let rec =
            IndividualRecord::new(1, vec![0.0, 0.0], vec![0.0], vec![Negative, NoTest, NoTest]);
        let mut short = theta.clone();
        short.hazard.horizon = 10;
        let post = smoothed_stage_posterior(&short, &rec);
        // undiagnosed records must span the model horizon; evaluate on a 3-step model
        assert!(post.is_err());
        let mut three = theta.clone();
        three.hazard = HazardModel::weibull(0.005, 1.5, vec![0.5, -0.25, 0.25], 3);
        let post = smoothed_stage_posterior(&three, &rec).unwrap();
        let oracle = brute_posterior(&three, &rec);
        for (r, o) in post.rows.iter().zip(&oracle) {
            for i in 0..3 {
                assert!(rel_err(r[i], o[i]) <= 1e-10 || (r[i] - o[i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn posterior_and_p_cf_match_enumeration_on_random_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let (theta, rec) = small_case(&mut rng);
            let post = smoothed_stage_posterior(&theta, &rec).unwrap();
            let oracle = brute_posterior(&theta, &rec);
            for (r, o) in post.rows.iter().zip(&oracle) {
                for i in 0..3 {
                    assert!(
                        rel_err(r[i], o[i]) <= 1e-10 || (r[i] - o[i]).abs() < 1e-15,
                        "{r:?} vs {o:?}"
                    );
                }
            }
            let cf_a = [1.0 - rec.a[0]];
            let horizon = theta.horizon();
            let got = counterfactual_diagnosis_prob(&theta, &rec, &cf_a, horizon).unwrap();
            let want = brute_p_cf(&theta, &rec, &cf_a, horizon);
            assert!(rel_err(got.p_cf, want) <= 1e-10, "{} vs {want}", got.p_cf);
            assert!((got.p_cf - (1.0 - got.survivor[horizon - 1])).abs() <= 1e-12);
        }
    }

    #[test]
    fn reference_equals_own_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..50 {
            let theta = random_params(&mut rng, 2, 1);
            let rec = random_record(&mut rng, 3, 2, theta.horizon());
            let own = factual_diagnosis_prob(&theta, &rec, theta.horizon()).unwrap();
            let cf = counterfactual_diagnosis_prob(&theta, &rec, &rec.a, theta.horizon()).unwrap();
            assert!((own.p_cf - cf.p_cf).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_reference_rates_give_zero() {
        let mut theta = scenario1_truth();
        theta.emission = EmissionModel::logistic_shared(vec![-800.0, 0.0], 0.3, false);
        theta.emission.late_rate = 1e-300;
        let rec = IndividualRecord::new(1, vec![0.2, 0.1], vec![1.0], vec![NoTest; 10]);
        let r = counterfactual_diagnosis_prob(&theta, &rec, &[0.0], 10).unwrap();
        assert!(r.p_cf.abs() < 1e-250);
    }

    #[test]
    fn reference_rates_ordering_scenario1() {
        let mut theta = scenario1_truth();
        theta.hazard.horizon = 3;
        let rec = IndividualRecord::new(1, vec![0.5, 0.5], vec![1.0], vec![NoTest; 3]);
        let to_ref = counterfactual_diagnosis_prob(&theta, &rec, &[0.0], 3)
            .unwrap()
            .p_cf;
        let to_own = counterfactual_diagnosis_prob(&theta, &rec, &[1.0], 3)
            .unwrap()
            .p_cf;
        assert!(to_ref > to_own);
        assert!(rel_err(to_ref, brute_p_cf(&theta, &rec, &[0.0], 3)) <= 1e-10);
        assert!(rel_err(to_own, brute_p_cf(&theta, &rec, &[1.0], 3)) <= 1e-10);
    }

    #[test]
    fn reference_layout_errors() {
        let theta = scenario1_truth();
        let rec = IndividualRecord::new(1, vec![0.0, 0.0], vec![1.0], vec![NoTest; 10]);
        assert!(matches!(
            counterfactual_diagnosis_prob(&theta, &rec, &[0.0, 1.0], 10),
            Err(Error::Reference(_))
        ));
        let regime = ReferenceRegime::fixed(vec![0.0, 0.0]);
        assert!(regime.apply(&[1.0]).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (u64, usize)> {
        (any::<u64>(), 0usize..4)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn posterior_invariants(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = random_params(&mut rng, 2, 1);
            let rec = random_record(&mut rng, 1, 2, theta.horizon());
            let post = smoothed_stage_posterior(&theta, &rec).unwrap();
            for (row, r) in post.rows.iter().zip(&rec.results) {
                prop_assert!(row.iter().all(|v| *v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
                if *r != TestResult::NoTest {
                    let mut one_hot = [0.0; 3];
                    one_hot[r.index()] = 1.0;
                    prop_assert_eq!(*row, one_hot);
                }
            }
            for k in 1..3 {
                let ex = post.exceedance(k);
                for w in ex.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-12);
                }
            }
        }

        #[test]
        fn p_cf_nondecreasing_in_horizon_and_early_rate((seed, bump) in arb_case()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = random_params(&mut rng, 2, 1);
            let mut rec = random_record(&mut rng, 1, 2, theta.horizon());
            // factual regime at level 1 so raising the level-0 rate leaves the history model fixed
            rec.a = vec![1.0];
            rec.results.truncate(1);
            rec.results[0] = NoTest;
            rec.diagnosed = false;
            let mut prev = 0.0;
            for h in 1..=theta.horizon() {
                let r = counterfactual_diagnosis_prob(&theta, &rec, &[0.0], h).unwrap();
                prop_assert!(r.p_cf >= prev - 1e-12);
                prev = r.p_cf;
            }
            let mut higher = theta.clone();
            if let crate::model::EmissionForm::GroupRates { stage1_rates, .. } = &mut higher.emission.form {
                stage1_rates[0] += (1.0 - stage1_rates[0]) * 0.2 * (bump as f64 + 1.0) / 4.0;
            }
            higher.emission.constraint_late_ge_early = false;
            let lo = counterfactual_diagnosis_prob(&theta, &rec, &[0.0], theta.horizon()).unwrap().p_cf;
            let hi = counterfactual_diagnosis_prob(&higher, &rec, &[0.0], theta.horizon()).unwrap().p_cf;
            prop_assert!(hi >= lo - 1e-12);
        }
    }
}
