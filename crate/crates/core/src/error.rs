use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownHamiltonian(String),

    #[error("width matrix is not in the Siegel half-space: {0}")]
    NotSiegel(String),

    #[error("mismatched semiclassical parameters: {0} vs {1}")]
    EpsMismatch(f64, f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("maximum number of integrator steps exceeded at t = {t}")]
    TooManySteps { t: f64 },

    #[error("near-singular matrix (condition number {condition:e}): {context}")]
    NearSingular { condition: f64, context: String },

    #[error("square-root branch jumped by {jump:.3} rad at t = {t}; refine the time grid")]
    BranchDiscontinuity { t: f64, jump: f64 },

    #[error("eigenvalue gap {gap:e} below threshold {threshold:e} at t = {t}")]
    CrossingProximity { t: f64, gap: f64, threshold: f64 },

    #[error("non-generic crossing: |d f/dt| = {rate:e} at t = {t}")]
    NonGenericCrossing { t: f64, rate: f64 },

    #[error("operation requires a two-level symbol")]
    NotTwoLevel,

    #[error("transition operator requires mu != 0")]
    DegenerateTransition,

    #[error("oscillatory quadrature did not converge (spread {spread:e})")]
    NoConvergence { spread: f64 },

    #[error("quadrature rule too large: {nodes} nodes exceeds cap {cap}")]
    TooManyNodes { nodes: usize, cap: usize },

    #[error("empty quadrature extent")]
    EmptyExtent,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownHamiltonian(_)
            | Error::InvalidParameter(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }
}
