use thiserror::Error;

/// Errors produced anywhere in the localization and reconstruction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:.3e}, tolerance {tolerance:.3e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("eigenvalue iteration failed to converge")]
    ConvergenceFailure,

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:.6e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("rank {rank} out of range [1, {max}]")]
    RankOutOfRange { rank: usize, max: usize },

    #[error("projector of rank {rank} is ill-defined: eigenvalue gap {gap:.3e} below {tolerance:.3e}")]
    DegenerateGap { rank: usize, gap: f64, tolerance: f64 },

    #[error("matrix is not similar to a symmetric matrix through the supplied factor: {0}")]
    NotSimilarizable(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid lead field: {0}")]
    InvalidLeadField(String),

    #[error("invalid source set: {0}")]
    InvalidSourceSet(String),

    #[error("lead-field columns {indices:?} are rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficientSubset { indices: Vec<usize>, ratio: f64 },

    #[error("time window [{start}, {end}] s contains no samples")]
    EmptyWindow { start: f64, end: f64 },

    #[error("too few samples for covariance estimation: {0} (need at least 2)")]
    TooFewSamples(usize),

    #[error("regularization factor must be non-negative, got {0}")]
    NegativeGamma(f64),

    #[error("infeasible dimensions: {0}")]
    InfeasibleDimensions(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("source covariance is not positive definite (smallest eigenvalue {0:.6e})")]
    Q0NotPD(f64),

    #[error("Q(theta) = S^-1 - G^-1 is not positive definite for sources {indices:?} (smallest eigenvalue {min_eigenvalue:.6e})")]
    QNotPositiveDefinite { indices: Vec<usize>, min_eigenvalue: f64 },

    #[error("kernel invariant violated: {0}")]
    KernelInvariant(String),

    #[error("every remaining candidate was degenerate at step {0}")]
    AllCandidatesDegenerate(usize),

    #[error("C({s}, {l}) = {count} combinations exceeds the limit {limit}")]
    ComboLimitExceeded { s: usize, l: usize, count: u128, limit: u128 },

    #[error("filter source set {filter:?} does not match the true sources {truth:?}")]
    SourceSetMismatch { filter: Vec<usize>, truth: Vec<usize> },

    #[error("covariance kind {found} does not match filter flavor {expected}")]
    CovarianceKindMismatch { expected: String, found: String },

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    /// True for failures of positive-definiteness or convergence; the CLI maps these to exit code 3.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::ConvergenceFailure
                | Error::DegenerateGap { .. }
                | Error::NotSimilarizable(_)
                | Error::RankDeficientSubset { .. }
                | Error::Q0NotPD(_)
                | Error::QNotPositiveDefinite { .. }
                | Error::KernelInvariant(_)
                | Error::AllCandidatesDegenerate(_)
                | Error::NotSymmetric { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
