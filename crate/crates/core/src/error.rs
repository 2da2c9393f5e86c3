use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input outside the domain of an operation.
    Domain(String),
    /// Fewer training samples than `dim + 1`.
    InsufficientData { needed: usize, got: usize },
    /// Design matrix column that is linearly dependent on earlier ones.
    /// Column 0 is the intercept, column `j + 1` is parameter `j`.
    RankDeficient { column: usize, name: String },
    /// The residual scale is zero or negative, so the band cannot be built.
    DegenerateModel { sigma: f64 },
    /// Stratum weights do not sum to one.
    InconsistentWeights { sum: f64 },
    /// No stratum can absorb the requested budget.
    Allocation(String),
    /// Candidate search exhausted its draw cap for a stratum.
    UnfillableStratum { stratum: usize, requested: usize, found: usize, draws: u64, weight: Option<f64> },
    /// A caller broke an operation's precondition.
    Contract(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need at least {needed} samples, got {got}")
            }
            Error::RankDeficient { column, name } => {
                write!(f, "rank-deficient design: column {column} ({name}) is linearly dependent")
            }
            Error::DegenerateModel { sigma } => {
                write!(f, "degenerate surrogate: residual sigma {sigma} must be positive")
            }
            Error::InconsistentWeights { sum } => {
                write!(f, "stratum weights sum to {sum}, expected 1")
            }
            Error::Allocation(msg) => write!(f, "allocation error: {msg}"),
            Error::UnfillableStratum { stratum, requested, found, draws, weight } => {
                write!(f, "stratum {stratum} unfillable: found {found} of {requested} candidates after {draws} draws")?;
                if let Some(w) = weight {
                    write!(f, " (estimated weight {w:.3e})")?;
                }
                Ok(())
            }
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
        }
    }
}

impl core::error::Error for Error {}
