//! Forward (lattice) recursion for one record.
//!
//! Each step mixes the stage distribution given past results through the
//! emission matrix to get the probability of the observed result, conditions
//! on it, and propagates through the transition kernel. Working with the
//! normalized stage distribution keeps every quantity in [0, 1].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{emission_prob, HmmParams, IndividualRecord, TestResult};

/// Per-step probabilities below this are treated as a model/data contradiction.
pub const MIN_STEP_PROB: f64 = 1e-300;

/// Quantities available at timepoint `t` before seeing its result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardState {
    pub t: usize,
    /// P(S_t = i | x, a, r_1..t-1)
    pub stage_given_past: [f64; 3],
    /// P(R_t = j | x, a, r_1..t-1)
    pub result_given_past: [f64; 4],
}

/// Full forward pass of one record.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub states: Vec<ForwardState>,
    /// P(S_t = i | x, a, r_1..t), conditioned on the result at t as well.
    pub filtered: Vec<[f64; 3]>,
    pub log_likelihood: f64,
}

/// The record-level inputs of the recursion once hazards and rates are known.
pub(crate) struct RecordKernel<'a> {
    pub id: u64,
    pub results: &'a [TestResult],
    /// Clamped hazard at t = 1..; at least `results.len()` entries.
    pub hazards: &'a [f64],
    pub rates: [f64; 3],
    pub progression: f64,
    pub late_fraction: f64,
}

/// Hazards and emission rates for `rec`, covering `len` timepoints.
pub(crate) fn record_inputs(
    theta: &HmmParams,
    rec: &IndividualRecord,
    emission_attributes: &[f64],
    len: usize,
    hazards: &mut Vec<f64>,
) -> Result<[f64; 3]> {
    let eta = theta.hazard.linear_predictor(&rec.x, &rec.a)?;
    theta.hazard.sequence(eta.exp(), len, hazards);
    theta.emission.stage_rates(emission_attributes)
}

impl RecordKernel<'_> {
    #[inline]
    fn initial(&self) -> [f64; 3] {
        let h = self.hazards[0];
        [
            1.0 - h,
            (1.0 - self.late_fraction) * h,
            self.late_fraction * h,
        ]
    }

    #[inline]
    pub(crate) fn propagate(&self, phi: &[f64; 3], h: f64) -> [f64; 3] {
        let q = self.progression;
        [
            phi[0] * (1.0 - h),
            phi[0] * h + phi[1] * (1.0 - q),
            phi[1] * q + phi[2],
        ]
    }

    #[inline]
    fn emission_column(&self, r: TestResult) -> [f64; 3] {
        [
            emission_prob(&self.rates, 0, r),
            emission_prob(&self.rates, 1, r),
            emission_prob(&self.rates, 2, r),
        ]
    }

    fn impossible(&self, t: usize, prob: f64) -> Error {
        Error::ImpossibleObservation {
            id: self.id,
            t: t + 1,
            result: self.results[t],
            prob,
        }
    }

    /// Log-likelihood only.
    pub(crate) fn log_likelihood(&self) -> Result<f64> {
        let mut pi = self.initial();
        let mut ll = 0.0;
        let n = self.results.len();
        for t in 0..n {
            let g = self.emission_column(self.results[t]);
            let w = [g[0] * pi[0], g[1] * pi[1], g[2] * pi[2]];
            let c = w[0] + w[1] + w[2];
            if !(c >= MIN_STEP_PROB) {
                return Err(self.impossible(t, c));
            }
            ll += c.ln();
            if t + 1 < n {
                let phi = [w[0] / c, w[1] / c, w[2] / c];
                pi = self.propagate(&phi, self.hazards[t + 1]);
            }
        }
        Ok(ll)
    }

    pub(crate) fn trace(&self) -> Result<ForwardTrace> {
        let n = self.results.len();
        let mut states = Vec::with_capacity(n);
        let mut filtered = Vec::with_capacity(n);
        let mut pi = self.initial();
        let mut ll = 0.0;
        for t in 0..n {
            let e = &self.rates;
            let result_given_past = [
                e[0] * pi[0],
                e[1] * pi[1],
                e[2] * pi[2],
                (1.0 - e[0]) * pi[0] + (1.0 - e[1]) * pi[1] + (1.0 - e[2]) * pi[2],
            ];
            states.push(ForwardState {
                t: t + 1,
                stage_given_past: pi,
                result_given_past,
            });
            let g = self.emission_column(self.results[t]);
            let w = [g[0] * pi[0], g[1] * pi[1], g[2] * pi[2]];
            let c = w[0] + w[1] + w[2];
            if !(c >= MIN_STEP_PROB) {
                return Err(self.impossible(t, c));
            }
            ll += c.ln();
            let phi = [w[0] / c, w[1] / c, w[2] / c];
            filtered.push(phi);
            if t + 1 < n {
                pi = self.propagate(&phi, self.hazards[t + 1]);
            }
        }
        Ok(ForwardTrace {
            states,
            filtered,
            log_likelihood: ll,
        })
    }

    /// Log-likelihood with its adjoints with respect to the record-level
    /// quantities: each hazard, the three stage testing rates, the
    /// progression rate and the baseline late fraction.
    pub(crate) fn log_likelihood_adjoint(
        &self,
        scratch: &mut AdjointScratch,
    ) -> Result<LocalAdjoint> {
        let n = self.results.len();
        scratch.reset(n);
        let mut pi = self.initial();
        let mut ll = 0.0;
        for t in 0..n {
            let g = self.emission_column(self.results[t]);
            let w = [g[0] * pi[0], g[1] * pi[1], g[2] * pi[2]];
            let c = w[0] + w[1] + w[2];
            if !(c >= MIN_STEP_PROB) {
                return Err(self.impossible(t, c));
            }
            ll += c.ln();
            let phi = [w[0] / c, w[1] / c, w[2] / c];
            scratch.predicted.push(pi);
            scratch.emission.push(g);
            scratch.norm.push(c);
            scratch.filtered.push(phi);
            if t + 1 < n {
                pi = self.propagate(&phi, self.hazards[t + 1]);
            }
        }

        let mut out = LocalAdjoint {
            log_likelihood: ll,
            hazard: std::mem::take(&mut scratch.hazard_bar),
            rates: [0.0; 3],
            progression: 0.0,
            late_fraction: 0.0,
        };
        out.hazard.clear();
        out.hazard.resize(n, 0.0);
        let q = self.progression;
        let f = self.late_fraction;
        let mut phi_bar = [0.0f64; 3];
        for t in (0..n).rev() {
            let c = scratch.norm[t];
            let phi = &scratch.filtered[t];
            let g = &scratch.emission[t];
            let pi = &scratch.predicted[t];
            let c_bar =
                (1.0 - (phi_bar[0] * phi[0] + phi_bar[1] * phi[1] + phi_bar[2] * phi[2])) / c;
            let w_bar = [
                phi_bar[0] / c + c_bar,
                phi_bar[1] / c + c_bar,
                phi_bar[2] / c + c_bar,
            ];
            let pi_bar = [w_bar[0] * g[0], w_bar[1] * g[1], w_bar[2] * g[2]];
            match self.results[t] {
                TestResult::NoTest => {
                    for i in 0..3 {
                        out.rates[i] -= w_bar[i] * pi[i];
                    }
                }
                r => {
                    let k = r.index();
                    out.rates[k] += w_bar[k] * pi[k];
                }
            }
            if t > 0 {
                let h = self.hazards[t];
                let prev = &scratch.filtered[t - 1];
                out.hazard[t] += prev[0] * (pi_bar[1] - pi_bar[0]);
                out.progression += prev[1] * (pi_bar[2] - pi_bar[1]);
                phi_bar = [
                    pi_bar[0] * (1.0 - h) + pi_bar[1] * h,
                    pi_bar[1] * (1.0 - q) + pi_bar[2] * q,
                    pi_bar[2],
                ];
            } else {
                let h1 = self.hazards[0];
                out.hazard[0] += -pi_bar[0] + (1.0 - f) * pi_bar[1] + f * pi_bar[2];
                out.late_fraction += h1 * (pi_bar[2] - pi_bar[1]);
            }
        }
        Ok(out)
    }
}

/// Reusable buffers for the adjoint pass.
#[derive(Default)]
pub(crate) struct AdjointScratch {
    predicted: Vec<[f64; 3]>,
    filtered: Vec<[f64; 3]>,
    emission: Vec<[f64; 3]>,
    norm: Vec<f64>,
    hazard_bar: Vec<f64>,
    pub hazards: Vec<f64>,
}

impl AdjointScratch {
    fn reset(&mut self, n: usize) {
        self.predicted.clear();
        self.filtered.clear();
        self.emission.clear();
        self.norm.clear();
        self.predicted.reserve(n);
    }

    pub(crate) fn recycle(&mut self, adj: LocalAdjoint) {
        self.hazard_bar = adj.hazard;
    }
}

/// Derivatives of one record's log-likelihood with respect to its local inputs.
#[derive(Debug, Clone)]
pub(crate) struct LocalAdjoint {
    pub log_likelihood: f64,
    pub hazard: Vec<f64>,
    pub rates: [f64; 3],
    pub progression: f64,
    pub late_fraction: f64,
}

/// Log of P(r_1..T_n | x, a; theta) by the forward recursion.
pub fn forward_log_likelihood(theta: &HmmParams, rec: &IndividualRecord) -> Result<f64> {
    let mut hz = Vec::with_capacity(rec.follow_up());
    let rates = record_inputs(theta, rec, &rec.a, rec.follow_up(), &mut hz)?;
    RecordKernel {
        id: rec.id,
        results: &rec.results,
        hazards: &hz,
        rates,
        progression: theta.progression,
        late_fraction: theta.baseline_late_fraction,
    }
    .log_likelihood()
}

/// Forward pass with every intermediate distribution retained.
pub fn forward_trace(theta: &HmmParams, rec: &IndividualRecord) -> Result<ForwardTrace> {
    let mut hz = Vec::with_capacity(rec.follow_up());
    let rates = record_inputs(theta, rec, &rec.a, rec.follow_up(), &mut hz)?;
    RecordKernel {
        id: rec.id,
        results: &rec.results,
        hazards: &hz,
        rates,
        progression: theta.progression,
        late_fraction: theta.baseline_late_fraction,
    }
    .trace()
}
