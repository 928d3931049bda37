use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("eigensolver did not converge: {0}")]
    Convergence(String),
    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },
    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),
    #[error("no direct sampler for this model/potential pair: {0}")]
    NotFactorizable(String),
    #[error("measure is not normalizable: {0}")]
    NonNormalizable(String),
    #[error("chain mixing warning: acceptance rate {0:.3} outside [0.1, 0.7]")]
    MixingWarning(f64),
    #[error("seeds have no common circular index <= {max_k}: {detail}")]
    IncompatibleSeeds { max_k: usize, detail: String },
    #[error("weight |u|^a e^(-W) unbounded on scan: {0}")]
    UnboundedWeight(String),
    #[error("grid has {points} points, limit is {limit}")]
    GridTooLarge { points: usize, limit: usize },
    #[error("spectral gap collapsed: |lambda2|/|lambda1| = {ratio:e}")]
    GapCollapse { ratio: f64 },
    #[error("adaptive quadrature exceeded its budget: {0}")]
    QuadratureFailure(String),
    #[error("finite-difference derivative unstable: {0}")]
    DerivativeUnstable(String),
    #[error("effective sample size {ess:.1} below required {required}")]
    InsufficientEss { ess: f64, required: f64 },
    #[error("no correlation decay detected above noise")]
    NoDecayDetected,
    #[error("observable has zero variance")]
    ZeroVariance,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
