use thiserror::Error;

use crate::model::TestResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the library.
///
/// Every variant maps to a short machine-readable code through [`Error::code`],
/// which the command-line front end prints alongside the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: &'static str,
    },

    #[error("timepoint {t} outside 1..={horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: u64, reason: String },

    #[error("record {id}: observed result {result} at t={t} has model probability {prob:e}")]
    ImpossibleObservation {
        id: u64,
        t: usize,
        result: TestResult,
        prob: f64,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite gradient component {index}")]
    NonFiniteGradient { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("rank-deficient design: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },

    #[error("perfect separation detected: coefficient {index} diverged ({value:.3})")]
    PerfectSeparation { index: usize, value: f64 },

    #[error("outcome has a single class ({0} observations)")]
    SingleClass(usize),

    #[error("no undiagnosed counterfactual probability mass in group (denominator {0:e})")]
    NoUndiagnosedMass(f64),

    #[error("reference regime incompatible with emission layout: {0}")]
    Reference(String),

    #[error("bootstrap failed: {failed} of {total} iterations did not complete")]
    Bootstrap { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code, one per variant family.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::InvalidParameter { .. } => "E_PARAMETER",
            Error::TimeOutOfRange { .. } => "E_TIME",
            Error::InvalidRecord { .. } => "E_RECORD",
            Error::ImpossibleObservation { .. } => "E_IMPOSSIBLE_OBSERVATION",
            Error::NonFinite { .. } => "E_NON_FINITE",
            Error::NonFiniteGradient { .. } => "E_NON_FINITE_GRADIENT",
            Error::Empty(_) => "E_EMPTY",
            Error::Optimizer(_) => "E_OPTIMIZER",
            Error::RankDeficient { .. } => "E_RANK_DEFICIENT",
            Error::PerfectSeparation { .. } => "E_SEPARATION",
            Error::SingleClass(_) => "E_SINGLE_CLASS",
            Error::NoUndiagnosedMass(_) => "E_NO_UNDIAGNOSED_MASS",
            Error::Reference(_) => "E_REFERENCE",
            Error::Bootstrap { .. } => "E_BOOTSTRAP",
            Error::Config(_) => "E_CONFIG",
            Error::Parse { .. } => "E_PARSE",
            Error::Io { .. } => "E_IO",
            Error::Serde(_) => "E_SERDE",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
