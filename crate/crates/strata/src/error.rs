use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{failed} of {total} evaluations failed in {stage} (first: {first})")]
    EvaluatorThreshold { stage: String, failed: usize, total: usize, first: String },

    #[error("allocation infeasible: {0}")]
    Allocation(#[source] strata_core::Error),

    #[error(transparent)]
    Core(#[from] strata_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl RunError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        RunError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        RunError::Format { path: path.into(), message: message.to_string() }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::EvaluatorThreshold { .. } => 3,
            RunError::Allocation(_) => 4,
            RunError::Core(strata_core::Error::Allocation(_))
            | RunError::Core(strata_core::Error::UnfillableStratum { .. }) => 4,
            _ => 1,
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
