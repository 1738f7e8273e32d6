use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e}, tolerance {tolerance:.3e})")]
    NonHermitian { deviation: f64, tolerance: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("quadrature did not reach tolerance {tolerance:.1e} (achieved {achieved:.3e})")]
    Quadrature { tolerance: f64, achieved: f64 },

    #[error("integration step {step:.3e} s underflows the minimum {min:.3e} s")]
    StepUnderflow { step: f64, min: f64 },

    #[error("packet {packet} left the Bloch ball at t = {time:.6e} s (|s|^2 = {norm2:.12})")]
    BlochViolation { packet: usize, time: f64, norm2: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}
