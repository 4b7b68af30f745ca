use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DidesError {
    /// An input lies outside the domain of the function (e.g. a nonpositive wage).
    #[error("domain error: {0}")]
    Domain(String),

    /// A model parameter violates its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Vector or matrix sizes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An occupation has a zero (or underflowed) employment share.
    #[error("occupation {occupation} has a zero share")]
    DegenerateShare { occupation: usize },

    /// A skill-loading row has no positive entry.
    #[error("occupation {occupation} has no positive skill loading")]
    DegenerateOccupation { occupation: usize },

    /// An iterative solver hit its iteration cap.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        /// Residual norm per iteration (possibly thinned for long runs).
        trace: Vec<f64>,
    },

    /// A theoretical structure the model guarantees was not found (e.g. complex eigenvalues).
    #[error("structure violation: {0}")]
    Structure(String),

    /// A linear system or basis is too ill-conditioned to use.
    #[error("ill-conditioned: {0}")]
    Conditioning(String),

    /// An estimator failed to produce a usable estimate.
    #[error("estimation failed: {0}")]
    Estimator(String),
}

/// Broad error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Solver,
    Estimator,
}

impl DidesError {
    pub fn class(&self) -> ErrorClass {
        match self {
            DidesError::Domain(_)
            | DidesError::Parameter(_)
            | DidesError::Dimension(_)
            | DidesError::DegenerateShare { .. }
            | DidesError::DegenerateOccupation { .. } => ErrorClass::Input,
            DidesError::NoConvergence { .. }
            | DidesError::Structure(_)
            | DidesError::Conditioning(_) => ErrorClass::Solver,
            DidesError::Estimator(_) => ErrorClass::Estimator,
        }
    }
}

pub type Result<T> = std::result::Result<T, DidesError>;
