use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum EdcsError {
    /// A parameter was outside its valid domain.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Squeezing/anti-squeezing pair cannot be produced by a lossy TMSV.
    #[error("infeasible squeezing (S = {squeeze_db} dB, A = {antisqueeze_db} dB): {reason}")]
    InfeasibleSqueezing {
        squeeze_db: f64,
        antisqueeze_db: f64,
        reason: String,
    },

    /// Two collections that must line up did not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("no spectral lines")]
    NoLines,

    /// A beat tone would alias above Nyquist.
    #[error("beat at {freq_hz} Hz is at or above Nyquist ({nyquist_hz} Hz)")]
    Aliasing { freq_hz: f64, nyquist_hz: f64 },

    /// A beat frequency does not fall on an FFT bin of the analysis segment.
    #[error("beat at {freq_hz} Hz is off the {bin_hz} Hz bin grid; use integer-period segments")]
    OffGrid { freq_hz: f64, bin_hz: f64 },

    #[error("least-squares fit did not converge after {iterations} iterations (best chi2 = {best_chi2})")]
    NonConvergence {
        iterations: usize,
        best_chi2: f64,
        best_params: Vec<f64>,
    },

    #[error("degenerate Jacobian: {0}")]
    DegenerateJacobian(String),

    /// Requested precision target not reached within the averaging range.
    #[error("target precision {target} not reached (best {best} at M = {max_m})")]
    Unreachable { target: f64, best: f64, max_m: usize },

    #[error("bad interferogram file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EdcsError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> EdcsError {
    EdcsError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite, got {v}")))
    }
}
