use thiserror::Error;

use crate::spectral::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("controller state poisoned by a non-finite sample; reset required")]
    Poisoned,

    #[error(
        "simulation unstable: axis {axis} reached |x| = {value:.3e} m at step {step} (limit {limit:.3e} m)"
    )]
    Unstable {
        axis: usize,
        step: usize,
        value: f64,
        limit: f64,
    },

    #[error("no resonance peak found in window [{low_hz:.3}, {high_hz:.3}] Hz")]
    NoPeak { low_hz: f64, high_hz: f64 },

    #[error("fit did not converge after {iterations} iterations: {diagnostic}")]
    NonConvergence {
        iterations: usize,
        diagnostic: String,
        best: Box<FitResult>,
    },

    #[error("peaks overlap: modes {a} and {b} are separated by {separation_hz:.3} Hz (< 5 linewidths)")]
    OverlappingPeaks {
        a: usize,
        b: usize,
        separation_hz: f64,
    },

    #[error("not an LTRJ1 trajectory (magic bytes {found:?})")]
    BadMagic { found: Vec<u8> },

    #[error("truncated trajectory: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("TOML write error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Configuration-type failures (CLI exit code 2); everything else is
    /// reported as a numerical or I/O failure (exit code 3).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Config(_) | Error::TomlParse(_)
        )
    }
}

/// Rejects values that are not finite and strictly positive.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(name, format!("must be finite and > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(Error::invalid(name, format!("must be finite and >= 0, got {value}")))
    }
}
