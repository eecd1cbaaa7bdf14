use thiserror::Error;

/// Structured errors. Contract misuse (bad parameters, broken meshes, malformed
/// tables) is an error; failed mathematical hypotheses are *data* and live in
/// `HypothesisReport`, not here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mesh integrity: {0}")]
    MeshIntegrity(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("assembly: {0}")]
    Assembly(String),

    /// A structural hypothesis on the nonlinearity fails (no admissible fixed
    /// point, no superlinearity witness, ...); callers map this to the
    /// validation-failure exit path rather than to an internal error.
    #[error("hypothesis not satisfied: {0}")]
    Hypothesis(String),

    #[error("truncation construction failed: {0}")]
    Truncation(String),

    /// Path construction could not certify the mountain-pass geometry; carries
    /// the measured energy profile along the last candidate path.
    #[error("geometry scan failed: {message}")]
    Geometry {
        message: String,
        energy_profile: Vec<f64>,
    },

    /// Solver non-convergence with diagnostics.
    #[error("solver did not converge: {message} (residual {residual:.3e} after {iterations} iterations)")]
    Solver {
        message: String,
        residual: f64,
        iterations: usize,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
