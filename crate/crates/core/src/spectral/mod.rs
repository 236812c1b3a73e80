//! Spectral estimation, line fitting, calibration and mode temperatures.

pub mod calibration;
pub mod fit;
pub mod temperature;
pub mod welch;

pub use calibration::{
    beta_alpha_sq_from_fit, calibrate_equipartition, calibrate_from_reference, Calibration,
    CalibrationComparison, ReferenceCalibration,
};
pub use fit::{check_separation, fit_lorentzian, FitOptions, FitResult, FitUncertainties, FitWindow};
pub use temperature::{in_window_fraction, mode_temperature, ModeTemperature};
pub use welch::{next_pow2, welch, welch_csd, CrossPsd, Psd, WelchAccumulator};
