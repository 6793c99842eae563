use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("inadmissible geometry: {0}")]
    Admissibility(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("field layout mismatch: {0}")]
    Layout(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations (tol {tol:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("right-hand side incompatible with singular system: kernel component {kernel_component:.3e} exceeds {limit:.3e}")]
    IncompatibleRhs { kernel_component: f64, limit: f64 },

    #[error("singular velocity block: {0}")]
    SingularBlock(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("incomplete solution set: missing {0}")]
    IncompleteSet(String),

    #[error("unknown coefficient definition: {0}")]
    UnknownDefinition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing coefficient: {0}")]
    MissingCoefficient(String),

    #[error("energy blow-up at step {step}: energy {energy:.3e} exceeds {limit:.3e} x initial")]
    BlowUp { step: usize, energy: f64, limit: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
