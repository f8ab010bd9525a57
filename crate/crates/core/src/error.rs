use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh resolution {0}: must be at least 1")]
    InvalidResolution(usize),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutOfDomain { x: f64, y: f64 },

    #[error("phantom primitive {index} is not compactly contained in the unit square")]
    Containment { index: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("linear solver failed after {iterations} iterations (relative residual {residual:e})")]
    SolverFailure { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("measurement point ({x}, {y}) lies on the inclusion boundary")]
    PointOnInterface { x: f64, y: f64 },

    #[error("reference inclusion has zero area")]
    EmptyReference,

    #[error("noise statistic undefined: clean measurements are identically zero")]
    ZeroDenominator,

    #[error("unsupported current count {0}: expected 3 or 7")]
    UnsupportedCurrentCount(usize),

    #[error("unknown scenario `{name}`; available presets: {available}")]
    UnknownScenario { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
