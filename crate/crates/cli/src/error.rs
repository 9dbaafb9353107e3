use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] cfhmm::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e}); results written to {artifact}")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
        artifact: String,
    },

    #[error("cannot create {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Config(_) => "E_CONFIG",
            CliError::NotConverged { .. } => "E_NOT_CONVERGED",
            CliError::Output { .. } => "E_IO",
        }
    }

    /// Process exit status: 2 for a completed but unconverged fit, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NotConverged { .. } => 2,
            _ => 1,
        }
    }
}
