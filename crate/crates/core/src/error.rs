use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative density {value:e} at cell {index} (x = {location:?})")]
    NegativeDensity {
        index: usize,
        location: [f64; 3],
        value: f64,
    },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("eigen decomposition failed for matrix of size {0}")]
    Eigen(usize),

    #[error("Newton foot-point solve did not converge after {iterations} iterations (residual {residual:e}) at x = {x:?}, t = {t}")]
    NewtonDivergence {
        t: f64,
        x: [f64; 3],
        iterations: usize,
        residual: f64,
    },

    #[error("singular characteristic Jacobian at x0 = {0:?}")]
    SingularJacobian([f64; 3]),

    #[error("kappa condition violated: spectrum distance {found:e} < {kappa:e} at x = {location:?}")]
    KappaViolation {
        found: f64,
        kappa: f64,
        location: [f64; 3],
    },

    #[error("right-hand side touches the boundary margin (max |f| = {0:e} within margin)")]
    RhsOnBoundary(f64),

    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("non-finite value in field `{field}` at step {step} (t = {t})")]
    NonFinite { field: String, step: usize, t: f64 },

    #[error("density undershoot {value:e} below tolerance {tolerance:e} in species {species} at step {step}")]
    Undershoot {
        species: String,
        value: f64,
        tolerance: f64,
        step: usize,
    },

    #[error("support radius {radius} of species {species} reached 0.9 L = {limit} at t = {t}")]
    SupportEscape {
        species: String,
        radius: f64,
        limit: f64,
        t: f64,
    },

    #[error("support radius {radius} of species {species} exceeds growth bound {bound} at t = {t}")]
    SupportBound {
        species: String,
        radius: f64,
        bound: f64,
        t: f64,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifacts in {dir}: expected {expected:?}")]
    MissingArtifacts { dir: String, expected: Vec<String> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
