use thiserror::Error;

pub type Result<T, E = SiviError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SiviError {
    #[error("shape mismatch at layer {layer}: expected width {expected}, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("array shape {shape:?} does not match data length {len}")]
    BadArray { shape: Vec<usize>, len: usize },
    #[error("non-finite gradient at parameter index {index}")]
    NonFiniteGradient { index: usize },
    #[error("rejection sampler exceeded {cap} proposals for a single draw")]
    RejectionCapExceeded { cap: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("surrogate objective is -inf: every atom underflowed for datum {index}")]
    ObjectiveUnderflow { index: usize },
    #[error("non-finite log-likelihood at datum {index}")]
    NonFiniteLikelihood { index: usize },
    #[error("non-finite density value at grid node {index}")]
    NonFiniteDensity { index: usize },
    #[error("negative density value {value} at grid node {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("sampling density is zero at its own sample {index}")]
    ZeroDensityAtSample { index: usize },
    #[error("branch regions {first} and {second} overlap")]
    OverlappingRegions { first: usize, second: usize },
    #[error("objective curves are defined on different grids")]
    GridMismatch,
    #[error("Newton iteration did not converge (final gradient norm {grad_norm:e})")]
    NewtonNonConvergence { grad_norm: f64 },
    #[error("training diverged after {iterations} iterations")]
    TrainingDiverged { iterations: usize },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
