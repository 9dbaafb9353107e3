//! Correction of differential underdiagnosis in clinical prediction models.
//!
//! Disease progression and testing are modelled as a progressive three-stage
//! hidden Markov model whose emissions are confirmatory test results. The
//! fitted model yields, for every individual, the probability of having been
//! diagnosed had they been tested at the rates of a reference group. Those
//! probabilities re-impute outcomes for training prediction models that are
//! not biased by heterogeneous diagnostic delay.
//!
//! Modules:
//! - [`model`]: hazards, transition kernel, emissions, initial state and the
//!   unconstrained parameterization.
//! - [`inference`]: forward recursion, gradient and L-BFGS maximum likelihood.
//! - [`counterfactual`]: smoothing, counterfactual diagnosis probabilities and
//!   outcome re-imputation.
//! - [`simulation`]: scenario cohort generators.
//! - [`prediction`]: logistic regression and validation metrics.
//! - [`pipeline`]: end-to-end replication studies and bootstrap optimism
//!   correction.
//! - [`io`]: CSV cohort and result files.

pub mod counterfactual;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod prediction;
pub mod seed;
pub mod simulation;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
