//! Mode temperature from a calibrated spectrum and its fitted line.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::calibration::Calibration;
use super::fit::{FitResult, FitWindow};
use super::welch::Psd;
use crate::constants::{BOLTZMANN, HBAR};
use crate::error::{require_positive, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeTemperature {
    /// From the floor-subtracted in-window power, K.
    pub temperature: f64,
    /// From the fitted amplitude alone, K.
    pub temperature_from_fit: f64,
    /// Mode position variance, m².
    pub position_variance: f64,
    pub occupancy: f64,
    /// Share of the fitted line's power that falls inside the window.
    pub in_window_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// `∫ Γ / ((ω² − Ω²)² + Ω²Γ²) dΩ` over `[lo, hi]` (rad/s), evaluated with
/// the substitution `Ω = ω + (Γ/2) tan θ`, which flattens the peak.
fn line_integral(omega: f64, gamma: f64, lo: f64, hi: f64) -> f64 {
    let half = 0.5 * gamma;
    let ta = ((lo - omega) / half).atan();
    let tb = ((hi - omega) / half).atan();
    let n = 4000;
    let h = (tb - ta) / n as f64;
    let f = |t: f64| {
        let o = omega + half * t.tan();
        let c = t.cos();
        let d = (omega * omega - o * o).powi(2) + o * o * gamma * gamma;
        gamma / d * half / (c * c)
    };
    let mut s = f(ta) + f(tb);
    for i in 1..n {
        let t = ta + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
    }
    s * h / 3.0
}

/// Fraction of the line's one-sided power that lies in `window`.
pub fn in_window_fraction(fit: &FitResult, window: &FitWindow) -> f64 {
    let lo = 2.0 * PI * window.low_hz;
    let hi = 2.0 * PI * window.high_hz;
    let total = PI / (2.0 * fit.omega * fit.omega);
    (line_integral(fit.omega, fit.gamma, lo, hi) / total).clamp(0.0, 1.0)
}

/// Temperature of mode `axis` described by `fit`, with the spectrum in
/// detector units and `calibration` converting them to meters.
///
/// The floor-subtracted power in the fit window is divided by the share of
/// the line that the window captures, converted to a position variance and
/// then to `T = m ω² ⟨x²⟩ / k_B`.
pub fn mode_temperature(
    psd: &Psd,
    fit: &FitResult,
    calibration: &Calibration,
    axis: usize,
) -> Result<ModeTemperature> {
    if axis > 2 {
        return Err(Error::invalid("axis", format!("{axis} is not 0, 1 or 2")));
    }
    let mass = calibration.mass;
    require_positive("mass", mass)?;
    let beta_sq = require_positive("calibration factor", calibration.beta_alpha_sq[axis])?;
    let range = psd.bin_range(fit.window.low_hz, fit.window.high_hz);
    if range.is_empty() {
        return Err(Error::invalid("fit window", "contains no spectrum bins"));
    }
    // the bin sum covers [first − Δf/2, last + Δf/2]
    let covered = FitWindow {
        low_hz: psd.freqs[range.start] - 0.5 * psd.resolution,
        high_hz: psd.freqs[range.end - 1] + 0.5 * psd.resolution,
    };
    let fraction = in_window_fraction(fit, &covered);
    if !(fraction > 0.0) {
        return Err(Error::invalid("fit window", "captures none of the fitted line"));
    }
    let power: f64 = psd.values[range].iter().map(|v| v - fit.floor).sum::<f64>() * psd.resolution;
    let variance = power / fraction / beta_sq;
    let w2 = fit.omega * fit.omega;
    let temperature = mass * w2 * variance / BOLTZMANN;
    let temperature_from_fit = fit.amplitude_scale * mass / (2.0 * BOLTZMANN * beta_sq);
    let warning = (fraction < 0.8).then(|| {
        format!(
            "fit window holds only {:.1} % of the line power; the temperature relies on the fitted shape",
            100.0 * fraction
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(ModeTemperature {
        temperature,
        temperature_from_fit,
        position_variance: variance,
        occupancy: BOLTZMANN * temperature / (HBAR * fit.omega),
        in_window_fraction: fraction,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::fit::FitUncertainties;

    fn line(f0: f64, gamma: f64) -> FitResult {
        FitResult {
            omega: 2.0 * PI * f0,
            gamma,
            amplitude_scale: 1.0,
            floor: 0.0,
            uncertainties: FitUncertainties {
                omega: 0.0,
                gamma: 0.0,
                amplitude_scale: 0.0,
                floor: 0.0,
            },
            window: FitWindow::new(0.0, 1e9).unwrap(),
            reduced_chi2: 1.0,
            n_points: 0,
            iterations: 0,
        }
    }

    #[test]
    fn full_line_integral_matches_closed_form() {
        for (f0, g) in [(1e4, 3.0), (1e3, 600.0), (9756.4, 2.0 * PI * 0.46)] {
            let w = 2.0 * PI * f0;
            let total = line_integral(w, g, 0.0, 1e3 * w);
            assert!((total / (PI / (2.0 * w * w)) - 1.0).abs() < 1e-3, "{f0} {g}");
        }
    }

    #[test]
    fn lorentzian_window_fraction() {
        // for a sharp line, ±kΓ/2 holds (2/π) atan(k) of the power
        let fit = line(1e4, 2.0 * PI * 1.0);
        for k in [1.0, 5.0, 30.0] {
            let win = FitWindow::new(1e4 - 0.5 * k, 1e4 + 0.5 * k).unwrap();
            let expected = 2.0 / PI * f64::atan(k);
            assert!((in_window_fraction(&fit, &win) - expected).abs() < 1e-3, "k={k}");
        }
    }

    #[test]
    fn recovers_temperature_of_exact_spectrum() {
        let (m, t, beta) = (2.8e-14, 297.0, 5e5);
        let f0 = 1000.0;
        let gamma = 2.0 * PI * 4.0;
        let mut fit = line(f0, gamma);
        fit.amplitude_scale = beta * beta * 2.0 * BOLTZMANN * t / m;
        fit.floor = 1e-30;
        fit.window = FitWindow::new(900.0, 1100.0).unwrap();
        let res = 0.05;
        let freqs: Vec<f64> = (1..40_000).map(|i| i as f64 * res).collect();
        let psd = Psd {
            values: freqs.iter().map(|f| fit.model(*f)).collect(),
            freqs,
            resolution: res,
            sample_rate: 4000.0,
            segment_len: 80_000,
            n_segments: 10,
            equivalent_averages: 10.0,
            windowed_variance: 0.0,
            window: "hann".into(),
            unit: "V".into(),
        };
        let mut cal = Calibration::unit(t, m);
        cal.beta_alpha_sq[2] = beta * beta;
        let mt = mode_temperature(&psd, &fit, &cal, 2).unwrap();
        assert!((mt.temperature / t - 1.0).abs() < 1e-3, "{}", mt.temperature);
        assert!((mt.temperature_from_fit / t - 1.0).abs() < 1e-12);
        assert!(mt.warning.is_none());
        let w = 2.0 * PI * f0;
        assert!((mt.occupancy / (BOLTZMANN * t / (HBAR * w)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn narrow_window_warns() {
        let mut fit = line(1000.0, 2.0 * PI * 10.0);
        fit.window = FitWindow::new(995.0, 1005.0).unwrap();
        let freqs: Vec<f64> = (1..4000).map(|i| i as f64 * 0.5).collect();
        let psd = Psd {
            values: freqs.iter().map(|f| fit.model(*f)).collect(),
            freqs,
            resolution: 0.5,
            sample_rate: 4000.0,
            segment_len: 8000,
            n_segments: 10,
            equivalent_averages: 10.0,
            windowed_variance: 0.0,
            window: "hann".into(),
            unit: "V".into(),
        };
        let mt = mode_temperature(&psd, &fit, &Calibration::unit(297.0, 1e-14), 0).unwrap();
        assert!(mt.warning.is_some());
        assert!(mt.in_window_fraction < 0.8);
    }
}
