use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to identify the
/// offending specification (K), observation, or replication without a debugger.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate support [{a}, {b}]: lower bound must be strictly below upper bound")]
    DegenerateSupport { a: f64, b: f64 },

    #[error("quantile knot rule needs at least {needed} distinct sample values, got {got}")]
    InsufficientQuantileSample { needed: usize, got: usize },

    #[error("knot sequence is not strictly increasing inside the support")]
    InvalidKnots,

    #[error("evaluation point {point} outside support [{a}, {b}] beyond tolerance")]
    PointOutOfSupport { point: f64, a: f64, b: f64 },

    #[error("derivative of an order-1 (piecewise constant) spline is not defined")]
    DerivativeOfConstantSpline,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("sample size {n} must exceed basis dimension {dim} (K={k})")]
    TooFewObservations { n: usize, dim: usize, k: usize },

    #[error("design matrix for K={k} is rank deficient: min/max singular value ratio {ratio:.3e} below 1e-10")]
    RankDeficient { k: usize, ratio: f64 },

    #[error("saturated fit: hat diagonal reaches 1 at observation {index}; leave-one-out CV undefined")]
    SaturatedObservation { index: usize },

    #[error("degenerate pointwise variance ({value:.3e}) for K={k}; refusing to clamp")]
    DegenerateVariance { k: usize, value: f64 },

    #[error("correlation matrix fails invariants: {0}")]
    InvalidCorrelation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("critical value request needs alpha*B >= 1, got alpha={alpha}, B={b}")]
    QuantileUndefined { alpha: f64, b: u64 },

    #[error("non-positive standard error {0}")]
    NonPositiveSe(f64),

    #[error("candidate K={k} failed during cross-validation: {source}")]
    CandidateFit {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weighted fit failed in bootstrap replication {replication} at K={k}: {source}")]
    BootstrapFit {
        replication: u64,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: u64,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit-code contract: 2 for user/input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateSupport { .. }
            | Error::InsufficientQuantileSample { .. }
            | Error::InvalidKnots
            | Error::PointOutOfSupport { .. }
            | Error::DerivativeOfConstantSpline
            | Error::InvalidData(_)
            | Error::InvalidCorrelation(_)
            | Error::InvalidConfig(_)
            | Error::QuantileUndefined { .. }
            | Error::NonPositiveSe(_)
            | Error::CsvParse { .. }
            | Error::Io(_) => 2,
            Error::Replication { source, .. }
            | Error::BootstrapFit { source, .. }
            | Error::CandidateFit { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
