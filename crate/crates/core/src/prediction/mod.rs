//! Downstream logistic prediction models and their evaluation.

mod bootstrap;
mod glm;
mod metrics;
mod models;

pub use bootstrap::{
    bootstrap_optimism, BootstrapResult, BootstrapSpec, OptimismEntry, MAX_FAILURE_FRACTION,
};
pub use glm::{fit_logistic, Design, GlmModel, SCORE_TOL, SEPARATION_BOUND};
pub use metrics::{
    auroc, calibration, decile_calibration, default_thresholds, evaluate, evaluate_strata,
    net_benefit, scalar_losses, Calibration, CalibrationBin, EvaluationOptions, MetricsReport,
    NetBenefitPoint, ScalarMetrics, Stratum, PRED_EPS,
};
pub use models::{design_matrix, ModelKind, TrainedModel};
