//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid probability vector: {0}")]
    InvalidPmf(String),

    #[error("invalid channel matrix: {0}")]
    InvalidChannel(String),

    #[error("unknown channel family `{0}`")]
    UnknownFamily(String),

    #[error("parameter out of range for family `{family}`: {reason}")]
    ParameterOutOfRange { family: String, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("capacity iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("rank too small: {0}")]
    RankDeficient(String),

    #[error("distribution leaves the simplex at n = {n}; minimal feasible n is {min_n}")]
    SimplexViolation { n: u64, min_n: u64 },

    #[error("saddlepoint target {a} outside the open range ({lo}, {hi}) of the tilted mean")]
    TiltRange { a: f64, lo: f64, hi: f64 },

    #[error("atom count {0} exceeds the exact-convolution cap {1}")]
    AtomExplosion(usize, usize),

    #[error("compute budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable kind tag used in structured CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidPmf(_) => "invalid_pmf",
            Error::InvalidChannel(_) => "invalid_channel",
            Error::UnknownFamily(_) => "unknown_family",
            Error::ParameterOutOfRange { .. } => "parameter_out_of_range",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::SupportViolation(_) => "support_violation",
            Error::DegenerateVariance(_) => "degenerate_variance",
            Error::NonConvergence(_) => "non_convergence",
            Error::RankDeficient(_) => "rank_deficient",
            Error::SimplexViolation { .. } => "simplex_violation",
            Error::TiltRange { .. } => "tilt_range",
            Error::AtomExplosion(_, _) => "atom_explosion",
            Error::BudgetExceeded(_) => "budget_exceeded",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
        }
    }
}
