//! Particle and trap parametrization plus the closed-form predictions built
//! on them: the thermal displacement spectrum, rms amplitude, quality factor,
//! phonon occupancy, gravitational state-reduction lifetime, and the cold
//! damping temperature law.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{BOLTZMANN, GRAVITATIONAL, HBAR, SILICA_DENSITY};
use crate::error::{require_positive, Error, Result};

/// A homogeneous sphere. The mass is `density · 4/3 π r³` unless set explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Microsphere {
    /// m
    pub radius: f64,
    /// kg/m³
    #[serde(default = "default_density")]
    pub density: f64,
    /// kg; overrides the density-derived value when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
}

fn default_density() -> f64 {
    SILICA_DENSITY
}

impl Microsphere {
    /// Silica sphere of the given diameter.
    pub fn silica(diameter: f64) -> Result<Self> {
        let sphere = Self {
            radius: 0.5 * diameter,
            density: SILICA_DENSITY,
            mass: None,
        };
        sphere.validate()?;
        Ok(sphere)
    }

    pub fn with_mass(radius: f64, mass: f64) -> Result<Self> {
        let sphere = Self {
            radius,
            density: SILICA_DENSITY,
            mass: Some(mass),
        };
        sphere.validate()?;
        Ok(sphere)
    }

    pub fn mass(&self) -> f64 {
        self.mass
            .unwrap_or_else(|| self.density * 4.0 / 3.0 * PI * self.radius.powi(3))
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("sphere radius", self.radius)?;
        require_positive("sphere density", self.density)?;
        require_positive("sphere mass", self.mass())?;
        Ok(())
    }
}

/// Angular frequencies (rad/s) of the three center-of-mass modes, x, y, z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapModes {
    pub omega: [f64; 3],
}

impl TrapModes {
    pub fn from_hz(freqs: [f64; 3]) -> Result<Self> {
        let modes = Self {
            omega: freqs.map(|f| 2.0 * PI * f),
        };
        modes.validate()?;
        Ok(modes)
    }

    pub fn hz(&self) -> [f64; 3] {
        self.omega.map(|w| w / (2.0 * PI))
    }

    pub fn max_hz(&self) -> f64 {
        self.hz().into_iter().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.omega {
            require_positive("mode angular frequency", w)?;
        }
        Ok(())
    }
}

/// Temperature and damping rate of one mode's bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    /// K
    pub temperature: f64,
    /// s⁻¹ (angular)
    pub damping: f64,
}

impl ThermalState {
    pub fn new(temperature: f64, damping: f64) -> Result<Self> {
        require_positive("temperature", temperature)?;
        require_positive("damping rate", damping)?;
        Ok(Self {
            temperature,
            damping,
        })
    }
}

/// Shape factor `Γ / ((ω² − Ω²)² + Ω² Γ²)` shared by the spectrum and fits.
#[inline]
pub fn resonance_kernel(mode_omega: f64, damping: f64, big_omega: f64) -> f64 {
    let w2 = mode_omega * mode_omega;
    let o2 = big_omega * big_omega;
    let d = w2 - o2;
    damping / (d * d + o2 * damping * damping)
}

/// Two-sided displacement spectrum in angular frequency (m²·s), normalized so
/// that `(1/2π) ∫ S dΩ` over the real line equals `k_B T / (m ω²)`.
pub fn analytic_psd(
    mode_omega: f64,
    state: &ThermalState,
    mass: f64,
    omega_grid: &[f64],
) -> Result<Vec<f64>> {
    require_positive("mass", mass)?;
    require_positive("mode angular frequency", mode_omega)?;
    let scale = 2.0 * BOLTZMANN * state.temperature / mass;
    omega_grid
        .iter()
        .map(|&big| {
            if big.is_finite() {
                Ok(scale * resonance_kernel(mode_omega, state.damping, big))
            } else {
                Err(Error::NonFinite("frequency grid".into()))
            }
        })
        .collect()
}

/// One-sided spectral density per Hz, `S_f(f) = 2 S(2πf)`, so that
/// `∫₀^∞ S_f df = ⟨x²⟩`. This is the convention used by every estimated
/// spectrum in the crate.
pub fn one_sided_psd_hz(mode_omega: f64, state: &ThermalState, mass: f64, freq_hz: f64) -> f64 {
    2.0 * 2.0 * BOLTZMANN * state.temperature / mass
        * resonance_kernel(mode_omega, state.damping, 2.0 * PI * freq_hz)
}

/// Thermal rms displacement `sqrt(k_B T / (m ω²))`.
pub fn rms_amplitude(mode_omega: f64, temperature: f64, mass: f64) -> Result<f64> {
    require_positive("mode angular frequency", mode_omega)?;
    require_positive("temperature", temperature)?;
    require_positive("mass", mass)?;
    Ok((BOLTZMANN * temperature / (mass * mode_omega * mode_omega)).sqrt())
}

/// `Q = ω / Γ`.
pub fn quality_factor(mode_omega: f64, damping: f64) -> Result<f64> {
    require_positive("mode angular frequency", mode_omega)?;
    require_positive("damping rate", damping)?;
    Ok(mode_omega / damping)
}

/// Mean phonon occupancy in the classical limit, `k_B T / (ħ ω)`.
pub fn thermal_occupancy(mode_omega: f64, temperature: f64) -> Result<f64> {
    require_positive("mode angular frequency", mode_omega)?;
    require_positive("temperature", temperature)?;
    Ok(BOLTZMANN * temperature / (HBAR * mode_omega))
}

/// Gravitationally induced state-reduction time scale `ħ r / (G m²)`.
pub fn reduction_lifetime(sphere: &Microsphere) -> Result<f64> {
    sphere.validate()?;
    let m = sphere.mass();
    Ok(HBAR * sphere.radius / (GRAVITATIONAL * m * m))
}

/// Mode temperature under cold damping, `T₀ Γ₀ / (Γ₀ + Γ_fb)`.
pub fn cooled_temperature(t0: f64, gamma0: f64, gamma_fb: f64) -> Result<f64> {
    require_positive("bath temperature", t0)?;
    require_positive("gas damping rate", gamma0)?;
    if !(gamma_fb >= 0.0) || !gamma_fb.is_finite() {
        return Err(Error::invalid(
            "feedback damping rate",
            format!("must be finite and >= 0, got {gamma_fb}"),
        ));
    }
    Ok(t0 * gamma0 / (gamma0 + gamma_fb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    const Y_MODE: f64 = 2.0 * PI * 9095.0;
    const MASS: f64 = 2.8e-14;

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        let (fa, fb) = (f(a), f(b));
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    /// (1/π) ∫₀^∞ S dΩ by splitting around the peak and mapping the tail onto [0, 1).
    fn integrated_variance(w: f64, state: &ThermalState, m: f64) -> f64 {
        let s = |x: f64| analytic_psd(w, state, m, &[x]).unwrap()[0];
        let g = state.damping;
        let lo = (w - 200.0 * g).max(0.0);
        let hi = w + 200.0 * g;
        let peak_scale = s(w);
        let mut total = 0.0;
        // near-peak region split into linewidth-sized pieces
        let pieces = 400;
        for i in 0..pieces {
            let a = lo + (hi - lo) * i as f64 / pieces as f64;
            let b = lo + (hi - lo) * (i + 1) as f64 / pieces as f64;
            total += simpson(&s, a, b, 1e-13 * peak_scale * (b - a));
        }
        total += simpson(&s, 0.0, lo, 1e-12 * peak_scale * g);
        let tail = |t: f64| {
            if t >= 1.0 {
                0.0
            } else {
                let x = hi + t / (1.0 - t) * w;
                s(x) * w / ((1.0 - t) * (1.0 - t))
            }
        };
        total += simpson(&tail, 0.0, 1.0, 1e-12 * peak_scale * g);
        total / PI
    }

    #[test]
    fn psd_at_zero_frequency() {
        let state = ThermalState::new(297.0, 100.0).unwrap();
        let s0 = analytic_psd(Y_MODE, &state, MASS, &[0.0]).unwrap()[0];
        let expect = 2.0 * BOLTZMANN * 297.0 * 100.0 / (MASS * Y_MODE.powi(4));
        assert!(rel(s0, expect) < 1e-14);
    }

    #[test]
    fn psd_integrates_to_equipartition_variance() {
        let state = ThermalState::new(297.0, 1e-4 * Y_MODE).unwrap();
        let var = integrated_variance(Y_MODE, &state, MASS);
        let expect = BOLTZMANN * 297.0 / (MASS * Y_MODE * Y_MODE);
        assert!(rel(var, expect) < 1e-3, "{var} vs {expect}");
    }

    #[test]
    fn variance_consistency_over_damping_range() {
        for ratio in [1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
            let state = ThermalState::new(10.0, ratio * Y_MODE).unwrap();
            let var = integrated_variance(Y_MODE, &state, MASS);
            let expect = BOLTZMANN * 10.0 / (MASS * Y_MODE * Y_MODE);
            assert!(rel(var, expect) < 5e-3, "Γ/ω = {ratio}: {var} vs {expect}");
        }
    }

    #[test]
    fn psd_rejects_bad_mass() {
        let state = ThermalState::new(297.0, 1.0).unwrap();
        assert!(analytic_psd(Y_MODE, &state, 0.0, &[1.0]).is_err());
    }

    #[test]
    fn one_sided_density_matches_two_sided() {
        let state = ThermalState::new(297.0, 30.0).unwrap();
        let f = 9000.0;
        let two = analytic_psd(Y_MODE, &state, MASS, &[2.0 * PI * f]).unwrap()[0];
        assert!(rel(one_sided_psd_hz(Y_MODE, &state, MASS, f), 2.0 * two) < 1e-15);
    }

    #[test]
    fn rms_amplitude_hot_and_cold() {
        let hot = rms_amplitude(Y_MODE, 297.0, MASS).unwrap();
        let cold = rms_amplitude(Y_MODE, 1.5e-3, MASS).unwrap();
        assert!(rel(hot, 6.7e-9) < 0.01, "{hot}");
        assert!(rel(cold, 15e-12) < 0.01, "{cold}");
        let quad = rms_amplitude(Y_MODE, 4.0 * 297.0, MASS).unwrap();
        assert!(rel(quad, 2.0 * hot) < 1e-14);
        assert!(rms_amplitude(Y_MODE, 0.0, MASS).is_err());
    }

    #[test]
    fn quality_factor_examples() {
        let q = quality_factor(2.0 * PI * 9756.4, 2.0 * PI * 0.46).unwrap();
        assert!(rel(q, 2.12e4) < 2e-3, "{q}");
        assert_eq!(quality_factor(5.0, 5.0).unwrap(), 1.0);
        assert_eq!(quality_factor(10.0, 5.0).unwrap(), 2.0 * quality_factor(5.0, 5.0).unwrap());
        assert!(quality_factor(5.0, 0.0).is_err());
    }

    #[test]
    fn occupancy_examples() {
        let hot = thermal_occupancy(Y_MODE, 297.0).unwrap();
        let cold = thermal_occupancy(Y_MODE, 1.5e-3).unwrap();
        assert!(rel(hot, 6.8e8) < 0.01, "{hot}");
        assert!(rel(cold, 3.4e3) < 0.02, "{cold}");
        assert!(rel(thermal_occupancy(Y_MODE, 148.5).unwrap(), 0.5 * hot) < 1e-14);
        assert!(thermal_occupancy(-1.0, 1.0).is_err());
    }

    #[test]
    fn reduction_lifetime_examples() {
        let s = Microsphere::with_mass(1.5e-6, 2.8e-14).unwrap();
        let t = reduction_lifetime(&s).unwrap();
        assert!(rel(t, 3.0e-3) < 0.02, "{t}");
        let heavy = Microsphere::with_mass(1.5e-6, 5.6e-14).unwrap();
        assert!(rel(reduction_lifetime(&heavy).unwrap(), t / 4.0) < 1e-14);
        let wide = Microsphere::with_mass(3.0e-6, 2.8e-14).unwrap();
        assert!(rel(reduction_lifetime(&wide).unwrap(), 2.0 * t) < 1e-14);
        assert!(Microsphere::with_mass(1.5e-6, 0.0).is_err());
    }

    #[test]
    fn silica_default_density_gives_reference_mass() {
        let s = Microsphere::silica(3.0e-6).unwrap();
        assert!(rel(s.mass(), 2.8e-14) < 0.005, "{}", s.mass());
        let derived = SILICA_DENSITY * 4.0 / 3.0 * PI * 1.5e-6f64.powi(3);
        assert!(rel(s.mass(), derived) < 4.0 * f64::EPSILON);
    }

    #[test]
    fn cooled_temperature_examples() {
        assert_eq!(cooled_temperature(297.0, 5.0, 0.0).unwrap(), 297.0);
        assert_eq!(cooled_temperature(297.0, 5.0, 5.0).unwrap(), 148.5);
        // 297 K -> 24 K needs Γ_fb/Γ₀ = 297/24 - 1
        let ratio: f64 = 297.0 / 24.0 - 1.0;
        assert!((ratio - 11.4).abs() < 0.05);
        assert!(rel(cooled_temperature(297.0, 1.0, ratio).unwrap(), 24.0) < 1e-12);
        assert!(cooled_temperature(297.0, 0.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn psd_is_even_and_positive(w in 1e2f64..1e6, ratio in 1e-5f64..1.0, x in -1e7f64..1e7) {
            let state = ThermalState::new(297.0, ratio * w).unwrap();
            let v = analytic_psd(w, &state, MASS, &[x, -x]).unwrap();
            prop_assert!(v[0] > 0.0);
            prop_assert_eq!(v[0], v[1]);
        }

        #[test]
        fn cooling_law_invariants(t0 in 1.0f64..1e3, g0 in 1e-3f64..1e4, fb in 0.0f64..1e5, extra in 1e-3f64..1e3) {
            let t = cooled_temperature(t0, g0, fb).unwrap();
            let t_more = cooled_temperature(t0, g0, fb + extra).unwrap();
            prop_assert!(t_more < t);
            prop_assert!(rel(t * (g0 + fb), t0 * g0) < 1e-14);
            let w = 2.0 * PI * 9095.0;
            let a = rms_amplitude(w, t, MASS).unwrap();
            let b = rms_amplitude(w, t0, MASS).unwrap() * (g0 / (g0 + fb)).sqrt();
            prop_assert!(rel(a, b) < 1e-14);
        }
    }
}
