//! Logistic regression by iteratively reweighted least squares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients beyond this magnitude are taken as divergence.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Convergence threshold on the largest score component.
pub const SCORE_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Row-major predictor matrix without the intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    n: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let p = names.len();
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "design row",
                    expected: p,
                    found: row.len(),
                });
            }
            data.extend(row);
            n += 1;
        }
        Ok(Self { names, n, data })
    }

    /// Design with no predictors, for intercept-only fits.
    pub fn intercept_only(n: usize) -> Self {
        Self {
            names: Vec::new(),
            n,
            data: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_predictors(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_predictors();
        &self.data[i * p..(i + 1) * p]
    }
}

/// Fitted logistic model: `coefficients[0]` is the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub max_score: f64,
}

impl GlmModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn predict(&self, design: &Design) -> Vec<f64> {
        (0..design.n_rows())
            .map(|i| expit(self.linear_predictor(design.row(i))))
            .collect()
    }
}

pub(crate) fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place lower Cholesky factor of a `p x p` row-major matrix. Returns the
/// first column whose pivot is not positive relative to `tol` times its
/// original diagonal.
fn cholesky(a: &mut [f64], p: usize, tol: f64) -> std::result::Result<(), usize> {
    for j in 0..p {
        let diag0 = a[j * p + j];
        let mut d = diag0;
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > tol * diag0.abs().max(f64::MIN_POSITIVE)) {
            return Err(j);
        }
        let l = d.sqrt();
        a[j * p + j] = l;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / l;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], p: usize, b: &mut [f64]) {
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = b[i];
        for k in i + 1..p {
            s -= l[k * p + i] * b[k];
        }
        b[i] = s / l[i * p + i];
    }
}

fn with_intercept(design: &Design, i: usize, buf: &mut [f64]) {
    buf[0] = 1.0;
    buf[1..].copy_from_slice(design.row(i));
}

/// Weighted cross-product `X' W X` including the intercept column.
fn cross_product(design: &Design, weights: impl Fn(usize) -> f64) -> Vec<f64> {
    let p = design.n_predictors() + 1;
    let mut out = vec![0.0; p * p];
    let mut z = vec![0.0; p];
    for i in 0..design.n_rows() {
        with_intercept(design, i, &mut z);
        let w = weights(i);
        for r in 0..p {
            let wr = w * z[r];
            for c in 0..=r {
                out[r * p + c] += wr * z[c];
            }
        }
    }
    for r in 0..p {
        for c in r + 1..p {
            out[r * p + c] = out[c * p + r];
        }
    }
    out
}

fn log_likelihood(design: &Design, y: &[bool], offset: Option<&[f64]>, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let eta = linear(design, i, beta, offset);
        // log expit(eta) and log(1 - expit(eta)) without cancellation
        let log1pexp = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll += if *yi { eta - log1pexp } else { -log1pexp };
    }
    ll
}

fn linear(design: &Design, i: usize, beta: &[f64], offset: Option<&[f64]>) -> f64 {
    beta[0]
        + beta[1..]
            .iter()
            .zip(design.row(i))
            .map(|(b, x)| b * x)
            .sum::<f64>()
        + offset.map_or(0.0, |o| o[i])
}

/// Maximum-likelihood logistic regression with intercept.
///
/// Stops when the largest score component is at most [`SCORE_TOL`], or when
/// Newton steps stall at floating-point resolution. Column `0` in a
/// rank-deficiency error is the intercept, column `j` is predictor `j - 1`.
pub fn fit_logistic(design: &Design, y: &[bool], offset: Option<&[f64]>) -> Result<GlmModel> {
    let n = design.n_rows();
    let p = design.n_predictors() + 1;
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome vector",
            expected: n,
            found: y.len(),
        });
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::DimensionMismatch {
                what: "offset vector",
                expected: n,
                found: o.len(),
            });
        }
    }
    if n <= p {
        return Err(Error::Config(format!(
            "logistic fit needs more rows ({n}) than coefficients ({p})"
        )));
    }
    let events = y.iter().filter(|v| **v).count();
    if events == 0 || events == n {
        return Err(Error::SingleClass(n));
    }
    let mut xtx = cross_product(design, |_| 1.0);
    cholesky(&mut xtx, p, 1e-10).map_err(|column| Error::RankDeficient { column })?;

    let mut beta = vec![0.0; p];
    if offset.is_none() {
        let ybar = events as f64 / n as f64;
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut ll = log_likelihood(design, y, offset, &beta);
    let mut z = vec![0.0; p];
    for iteration in 0..=MAX_ITER {
        let mu: Vec<f64> = (0..n)
            .map(|i| expit(linear(design, i, &beta, offset)))
            .collect();
        let mut score = vec![0.0; p];
        for i in 0..n {
            with_intercept(design, i, &mut z);
            let r = y[i] as u8 as f64 - mu[i];
            for (s, zj) in score.iter_mut().zip(&z) {
                *s += r * zj;
            }
        }
        let max_score = score.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if !max_score.is_finite() {
            return Err(Error::NonFinite {
                context: "logistic score".into(),
            });
        }
        let done = |beta: &[f64], iterations| GlmModel {
            names: design.names.clone(),
            coefficients: beta.to_vec(),
            iterations,
            max_score,
        };
        if max_score <= SCORE_TOL {
            return Ok(done(&beta, iteration));
        }
        if iteration == MAX_ITER {
            return Err(Error::Optimizer(format!(
                "IRLS did not converge in {MAX_ITER} iterations (max score {max_score:e})"
            )));
        }
        let mut info = cross_product(design, |i| mu[i] * (1.0 - mu[i]));
        let mut step = score;
        match cholesky(&mut info, p, 1e-14) {
            Ok(()) => cholesky_solve(&info, p, &mut step),
            Err(_) => {
                // weights collapsed: the fit is running off to infinity
                let (index, value) = largest(&beta);
                return Err(Error::PerfectSeparation { index, value });
            }
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let cand_ll = log_likelihood(design, y, offset, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs() {
                let stalled = cand
                    .iter()
                    .zip(&beta)
                    .all(|(c, b)| (c - b).abs() <= 1e-13 * (1.0 + b.abs()));
                beta = cand;
                ll = cand_ll;
                accepted = true;
                if stalled {
                    return Ok(done(&beta, iteration + 1));
                }
                break;
            }
            scale *= 0.5;
        }
        if let Some((index, value)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > SEPARATION_BOUND)
            .map(|(i, b)| (i, *b))
        {
            return Err(Error::PerfectSeparation { index, value });
        }
        if !accepted {
            return Ok(done(&beta, iteration + 1));
        }
    }
    unreachable!("loop returns by MAX_ITER")
}

fn largest(beta: &[f64]) -> (usize, f64) {
    beta.iter().enumerate().fold((0, 0.0), |(bi, bv), (i, v)| {
        if v.abs() > bv.abs() {
            (i, *v)
        } else {
            (bi, bv)
        }
    })
}
