use nalgebra::DVector;
use thiserror::Error;

/// Errors produced by the synthesis, simulation and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("singular matrix in {context} (condition number {cond:.3e})")]
    Singular { context: &'static str, cond: f64 },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("center {index}: {reason}")]
    Center { index: usize, reason: String },

    #[error("no positive semidefinite dissipation exists at this state (most negative eigenvalue {min_eig:.3e})")]
    NoPsdDissipation { min_eig: f64 },

    #[error("dissipation is undefined: {0}")]
    Dissipation(String),

    #[error("controlled inertia is not positive definite at {} grid point(s)", points.len())]
    NotPositiveDefinite { points: Vec<DVector<f64>> },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("trajectory too short: {len} samples, at least {min} required")]
    TooShort { len: usize, min: usize },

    #[error("malformed model document, line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}
