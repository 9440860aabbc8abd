use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid degree distribution: {0}")]
    InvalidDistribution(String),

    #[error("nonpositive design rate: {0}")]
    NonpositiveRate(String),

    #[error("ensemble is not unconditionally stable (minimum variable degree {0})")]
    NotUnconditionallyStable(u32),

    #[error("multiple critical points: {0} tangency solutions found")]
    MultipleCriticalPoints(usize),

    #[error("no critical point: the tangency condition has no solution in (0, 1)")]
    NoCriticalPoint,

    #[error("covariance lost positive semidefiniteness at tau={tau} (min eigenvalue {min_eigenvalue})")]
    NotPositiveSemidefinite { tau: f64, min_eigenvalue: f64 },

    #[error("degenerate scaling slope c={0}")]
    DegenerateSlope(f64),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("unrealizable degree sequence: {0}")]
    UnrealizableDegreeSequence(String),

    #[error("alpha mode mismatch: {alpha_mode} alpha does not match the {channel} channel")]
    ModeMismatch { alpha_mode: String, channel: String },

    #[error("cycle regime: error-floor exponent undefined for minimum variable degree 2")]
    CycleRegime,

    #[error("trial budget exhausted before resolving P=1/2; bracket [{lo}, {hi}]")]
    BudgetExhausted { lo: f64, hi: f64 },

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("degenerate fit data: {0}")]
    DegenerateData(String),

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("unresolved: {0}")]
    Unresolved(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
