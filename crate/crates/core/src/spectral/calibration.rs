//! Detector calibration: volts per meter along each mode.
//!
//! Two independent routes are provided. The reference route reads the fitted
//! amplitude of a spectrum taken at a known bath temperature. The
//! equipartition route low-passes the voltage record, differentiates it and
//! compares the velocity variance with `k_B T₀ / m`.

use serde::{Deserialize, Serialize};

use super::fit::{check_separation, fit_lorentzian, FitOptions, FitResult, FitWindow};
use super::welch::Psd;
use crate::constants::BOLTZMANN;
use crate::controller::{Biquad, Matrix3};
use crate::error::{require_positive, Error, Result};

/// Detector calibration for the three modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `β_j² α_jj²`, V²/m², relating detector `j` to mode `j`.
    pub beta_alpha_sq: [f64; 3],
    /// `β_i²`, V²/m², when an equipartition calibration is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_sq: Option<[f64; 3]>,
    /// `α_ij²`; only the diagonal is estimated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_sq: Option<Matrix3>,
    /// K
    pub reference_temperature: f64,
    /// kg
    pub mass: f64,
}

impl Calibration {
    /// Calibration for channels already expressed in meters.
    pub fn unit(reference_temperature: f64, mass: f64) -> Self {
        Self {
            beta_alpha_sq: [1.0; 3],
            beta_sq: None,
            alpha_sq: None,
            reference_temperature,
            mass,
        }
    }

    /// Adds equipartition `β²` values and the implied diagonal `α²`.
    pub fn with_beta_sq(mut self, beta_sq: [f64; 3]) -> Self {
        let mut alpha = [[0.0; 3]; 3];
        for (j, row) in alpha.iter_mut().enumerate() {
            row[j] = self.beta_alpha_sq[j] / beta_sq[j];
        }
        self.beta_sq = Some(beta_sq);
        self.alpha_sq = Some(alpha);
        self
    }

    /// Agreement of the two methods per axis, if both were run.
    pub fn consistency(&self) -> Option<[CalibrationComparison; 3]> {
        let b = self.beta_sq?;
        Some([0, 1, 2].map(|j| compare(self.beta_alpha_sq[j], b[j])))
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.beta_alpha_sq {
            require_positive("calibration factor", v)?;
        }
        require_positive("reference temperature", self.reference_temperature)?;
        require_positive("mass", self.mass)?;
        Ok(())
    }
}

/// `β²α² = A m / (2 k_B T₀)` from a fit to an uncooled spectrum.
pub fn beta_alpha_sq_from_fit(fit: &FitResult, t0: f64, mass: f64) -> Result<f64> {
    require_positive("reference temperature", t0)?;
    require_positive("mass", mass)?;
    require_positive("fitted amplitude", fit.amplitude_scale)?;
    Ok(fit.amplitude_scale * mass / (2.0 * BOLTZMANN * t0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCalibration {
    pub calibration: Calibration,
    pub fits: [FitResult; 3],
}

/// Fits mode `j` in detector `j`'s spectrum (taken at bath temperature `t0`)
/// and converts each fitted amplitude to `β_j² α_jj²`.
pub fn calibrate_from_reference(
    psds: &[Psd; 3],
    windows: &[FitWindow; 3],
    t0: f64,
    mass: f64,
    options: &FitOptions,
) -> Result<ReferenceCalibration> {
    let fits = [
        fit_lorentzian(&psds[0], windows[0], options)?,
        fit_lorentzian(&psds[1], windows[1], options)?,
        fit_lorentzian(&psds[2], windows[2], options)?,
    ];
    check_separation(&fits.each_ref().map(|f| (f.frequency_hz(), f.linewidth_hz())))?;
    let mut beta_alpha_sq = [0.0; 3];
    for (b, f) in beta_alpha_sq.iter_mut().zip(&fits) {
        *b = beta_alpha_sq_from_fit(f, t0, mass)?;
    }
    Ok(ReferenceCalibration {
        calibration: Calibration {
            beta_alpha_sq,
            beta_sq: None,
            alpha_sq: None,
            reference_temperature: t0,
            mass,
        },
        fits,
    })
}

/// `β² = m ⟨(dU/dt)²⟩ / (k_B T₀)` after a second-order Butterworth low-pass
/// at `cutoff_hz`. The first `8 fs / cutoff` samples are discarded as filter
/// transient. Rows of `α` have unit norm, so this recovers `β²` itself.
pub fn calibrate_equipartition(
    voltages: &[f64],
    dt: f64,
    mass: f64,
    t0: f64,
    cutoff_hz: f64,
) -> Result<f64> {
    require_positive("time step", dt)?;
    require_positive("cutoff frequency", cutoff_hz)?;
    require_positive("reference temperature", t0)?;
    require_positive("mass", mass)?;
    let sample_rate = 1.0 / dt;
    if cutoff_hz >= 0.5 * sample_rate {
        return Err(Error::invalid(
            "cutoff frequency",
            format!("{cutoff_hz} Hz is not below Nyquist ({} Hz)", 0.5 * sample_rate),
        ));
    }
    if voltages.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration record".into()));
    }
    let transient = (8.0 * sample_rate / cutoff_hz).ceil() as usize;
    if voltages.len() < transient + 16 {
        return Err(Error::invalid(
            "calibration record",
            format!(
                "{} samples; need more than {} to clear the filter transient",
                voltages.len(),
                transient + 16
            ),
        ));
    }
    let mut lp = Biquad::butterworth_lowpass(cutoff_hz, sample_rate);
    let filtered: Vec<f64> = voltages.iter().map(|&u| lp.process(u)).collect();
    let kept = &filtered[transient..];
    let half_rate = 0.5 * sample_rate;
    let mean_sq = kept
        .windows(3)
        .map(|w| {
            let d = (w[2] - w[0]) * half_rate;
            d * d
        })
        .sum::<f64>()
        / (kept.len() - 2) as f64;
    Ok(mass * mean_sq / (BOLTZMANN * t0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationComparison {
    /// Reference value over equipartition value.
    pub ratio: f64,
    /// False when the two disagree by more than 25 %.
    pub consistent: bool,
}

pub fn compare(reference: f64, equipartition: f64) -> CalibrationComparison {
    let ratio = reference / equipartition;
    CalibrationComparison {
        ratio,
        consistent: ratio.max(1.0 / ratio) <= 1.25,
    }
}
