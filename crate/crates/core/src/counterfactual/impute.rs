//! Outcome re-imputation under the reference testing regime.

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{counterfactual_diagnosis_prob, ReferenceRegime};
use crate::error::{Error, Result};
use crate::inference::ImpossibleRecords;
use crate::model::{HmmParams, IndividualRecord};
use crate::seed::individual_rng;

/// Scaling applied to undiagnosed individuals' counterfactual probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    /// Value used for imputation, clamped to [0, 1].
    pub factor: f64,
    /// Value before clamping.
    pub raw: f64,
}

impl Recalibration {
    pub fn clamped(&self) -> bool {
        self.factor != self.raw
    }
}

fn clamp_factor(raw: f64) -> Recalibration {
    let factor = raw.clamp(0.0, 1.0);
    if factor != raw {
        warn!("recalibration factor {raw} outside [0, 1]; clamped to {factor}");
    }
    Recalibration { factor, raw }
}

/// Factor that makes the expected imputed incidence of a group equal its
/// estimated counterfactual incidence:
///
/// `factor * sum_{undiagnosed} p_cf + #diagnosed = sum_{all} p_cf`.
pub fn recalibration_factor(p_cf: &[f64], diagnosed: &[bool]) -> Result<Recalibration> {
    if p_cf.is_empty() {
        return Err(Error::Empty("recalibration group"));
    }
    if p_cf.len() != diagnosed.len() {
        return Err(Error::DimensionMismatch {
            what: "diagnosis flags",
            expected: p_cf.len(),
            found: diagnosed.len(),
        });
    }
    let n = p_cf.len() as f64;
    let total: f64 = p_cf.iter().sum();
    let n_diag = diagnosed.iter().filter(|d| **d).count() as f64;
    let undiag: f64 = p_cf
        .iter()
        .zip(diagnosed)
        .filter(|(_, d)| !**d)
        .map(|(p, _)| p)
        .sum();
    recalibration_factor_from_means(total / n, n_diag / n, undiag / n)
}

/// The same factor from group-level summaries: the mean counterfactual
/// probability, the observed incidence, and the undiagnosed members'
/// counterfactual probability mass divided by the group size.
pub fn recalibration_factor_from_means(
    mean_p_cf: f64,
    incidence: f64,
    undiagnosed_mass: f64,
) -> Result<Recalibration> {
    if !(undiagnosed_mass > 1e-12) {
        return Err(Error::NoUndiagnosedMass(undiagnosed_mass));
    }
    Ok(clamp_factor((mean_p_cf - incidence) / undiagnosed_mass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FactorStrata {
    /// One factor over everyone outside the reference regime.
    #[default]
    Pooled,
    /// One factor per distinct factual attribute vector.
    PerRegime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputationOptions {
    /// Horizon of the counterfactual diagnosis probability; 0 uses the model horizon.
    pub horizon: usize,
    pub strata: FactorStrata,
    pub seed: u64,
    /// Under `Exclude`, a diagnosed record whose history is impossible under
    /// the model gets `p_cf = 1`, which leaves it out of the recalibration
    /// factor; it stays diagnosed.
    pub impossible_records: ImpossibleRecords,
}

impl Default for ImputationOptions {
    fn default() -> Self {
        Self {
            horizon: 0,
            strata: FactorStrata::Pooled,
            seed: 0,
            impossible_records: ImpossibleRecords::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedRecord {
    pub id: u64,
    pub p_cf: f64,
    /// Factor multiplying `p_cf` in the Bernoulli draw; absent when no draw was made.
    pub factor_applied: Option<f64>,
    pub d_observed: bool,
    pub d_cf: bool,
    pub reference_member: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumFactor {
    /// Attribute vector of the stratum; empty for the pooled factor.
    pub attributes: Vec<f64>,
    pub n: usize,
    pub recalibration: Recalibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationResult {
    /// In input order.
    pub records: Vec<ImputedRecord>,
    pub factors: Vec<StratumFactor>,
    /// Individuals whose scaled probability exceeded 1.
    pub n_clamped: usize,
    /// Diagnosed individuals with impossible histories given `p_cf = 1`.
    #[serde(default)]
    pub n_impossible: usize,
}

impl ImputationResult {
    pub fn d_cf(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.d_cf).collect()
    }
}

/// Counterfactual outcomes under `reference`.
///
/// Reference-group members keep their observed outcome, diagnosed individuals
/// stay diagnosed, and the remaining individuals are diagnosed with
/// probability `factor * p_cf`, drawn from a stream derived from `(seed, id)`.
pub fn impute_counterfactual_outcomes(
    theta: &HmmParams,
    cohort: &[IndividualRecord],
    reference: &ReferenceRegime,
    opts: &ImputationOptions,
) -> Result<ImputationResult> {
    if cohort.is_empty() {
        return Err(Error::Empty("cohort"));
    }
    let horizon = if opts.horizon == 0 {
        theta.horizon()
    } else {
        opts.horizon
    };
    let probs: Vec<Result<(f64, bool)>> = cohort
        .par_iter()
        .map(|rec| {
            let cf_a = reference.apply(&rec.a)?;
            let member = cf_a == rec.a;
            let p = match counterfactual_diagnosis_prob(theta, rec, &cf_a, horizon) {
                Ok(r) => r.p_cf,
                Err(Error::ImpossibleObservation { .. })
                    if rec.diagnosed && opts.impossible_records == ImpossibleRecords::Exclude =>
                {
                    f64::NAN
                }
                Err(e) => return Err(e),
            };
            Ok((p, member))
        })
        .collect();
    let mut probs: Vec<(f64, bool)> = probs.into_iter().collect::<Result<_>>()?;
    let mut n_impossible = 0;
    for p in probs.iter_mut().filter(|p| p.0.is_nan()) {
        p.0 = 1.0;
        n_impossible += 1;
    }
    if n_impossible > 0 {
        warn!("{n_impossible} diagnosed records with impossible histories given p_cf = 1");
    }

    // stratum index per non-reference individual
    let mut keys: Vec<Vec<f64>> = Vec::new();
    let mut stratum = vec![usize::MAX; cohort.len()];
    for (i, rec) in cohort.iter().enumerate() {
        if probs[i].1 {
            continue;
        }
        let key = match opts.strata {
            FactorStrata::Pooled => Vec::new(),
            FactorStrata::PerRegime => rec.a.clone(),
        };
        stratum[i] = match keys.iter().position(|k| *k == key) {
            Some(k) => k,
            None => {
                keys.push(key);
                keys.len() - 1
            }
        };
    }
    let mut factors = Vec::with_capacity(keys.len());
    let mut factor_of = vec![f64::NAN; keys.len()];
    for (k, key) in keys.into_iter().enumerate() {
        let members: Vec<usize> = (0..cohort.len()).filter(|&i| stratum[i] == k).collect();
        // a fully diagnosed stratum has nothing to impute
        if members.iter().all(|&i| cohort[i].diagnosed) {
            continue;
        }
        let p: Vec<f64> = members.iter().map(|&i| probs[i].0).collect();
        let d: Vec<bool> = members.iter().map(|&i| cohort[i].diagnosed).collect();
        let recalibration = recalibration_factor(&p, &d)?;
        info!(
            "recalibration factor {:.6} (raw {:.6}) over {} individuals{}",
            recalibration.factor,
            recalibration.raw,
            members.len(),
            if key.is_empty() {
                String::new()
            } else {
                format!(" with a = {key:?}")
            }
        );
        factor_of[k] = recalibration.factor;
        factors.push(StratumFactor {
            attributes: key,
            n: members.len(),
            recalibration,
        });
    }

    let mut n_clamped = 0;
    let records: Vec<ImputedRecord> = cohort
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let (p_cf, member) = probs[i];
            let (factor_applied, d_cf) = if member {
                (None, rec.diagnosed)
            } else if rec.diagnosed {
                (None, true)
            } else {
                let f = factor_of[stratum[i]];
                let scaled = f * p_cf;
                if scaled > 1.0 {
                    n_clamped += 1;
                }
                let mut rng = individual_rng(opts.seed, rec.id);
                (Some(f), rng.random::<f64>() < scaled.clamp(0.0, 1.0))
            };
            ImputedRecord {
                id: rec.id,
                p_cf,
                factor_applied,
                d_observed: rec.diagnosed,
                d_cf,
                reference_member: member,
            }
        })
        .collect();
    if n_clamped > 0 {
        warn!("{n_clamped} individuals had factor * p_cf > 1 and were clamped");
    }
    Ok(ImputationResult {
        records,
        factors,
        n_clamped,
        n_impossible,
    })
}
