//! Exact likelihood by the forward recursion and maximum-likelihood fitting.

mod fit;
mod forward;
pub mod lbfgs;
mod objective;

pub use fit::{
    fit_mle, EmissionKind, FitOptions, FitResult, GradientMethod, HazardKind, ImpossibleRecords,
    ModelSpec, TraceEntry,
};
pub use forward::{
    forward_log_likelihood, forward_trace, ForwardState, ForwardTrace, MIN_STEP_PROB,
};
pub use objective::{
    dataset_log_likelihood, finite_difference_gradient, log_likelihood_gradient, Objective,
};

pub(crate) use forward::{record_inputs, RecordKernel};
