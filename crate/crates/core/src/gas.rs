//! Rarefied-gas drag on a sphere.
//!
//! The damping rate interpolates between Stokes drag in the continuum limit
//! and a drag proportional to pressure in the free-molecular limit, through
//! the Knudsen number `Kn = s / r` and a small slip correction `c_K(Kn)`.
//! Diffusive reflection with surface accommodation is assumed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::constants::{AIR_MOLECULE_DIAMETER, AIR_VISCOSITY, BOLTZMANN, ROOM_TEMPERATURE};
use crate::error::{require_non_negative, require_positive, Result};
use crate::trap::Microsphere;

/// Ambient gas around the trapped particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasConditions {
    /// Pa
    pub pressure: f64,
    /// K
    pub temperature: f64,
    /// Pa·s
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    /// m
    #[serde(default = "default_molecule_diameter")]
    pub molecule_diameter: f64,
}

fn default_viscosity() -> f64 {
    AIR_VISCOSITY
}

fn default_molecule_diameter() -> f64 {
    AIR_MOLECULE_DIAMETER
}

impl GasConditions {
    /// Air at the given pressure and temperature with default viscosity and
    /// molecular diameter.
    pub fn air(pressure: f64, temperature: f64) -> Result<Self> {
        let gas = Self {
            pressure,
            temperature,
            viscosity: AIR_VISCOSITY,
            molecule_diameter: AIR_MOLECULE_DIAMETER,
        };
        gas.validate()?;
        Ok(gas)
    }

    pub fn with_pressure(&self, pressure: f64) -> Self {
        Self { pressure, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("gas pressure", self.pressure)?;
        // zero is allowed: no thermal drive, continuum-limit drag
        require_non_negative("gas temperature", self.temperature)?;
        require_positive("gas viscosity", self.viscosity)?;
        require_positive("molecule diameter", self.molecule_diameter)?;
        Ok(())
    }
}

impl Default for GasConditions {
    fn default() -> Self {
        Self {
            pressure: 101_325.0,
            temperature: ROOM_TEMPERATURE,
            viscosity: AIR_VISCOSITY,
            molecule_diameter: AIR_MOLECULE_DIAMETER,
        }
    }
}

/// Hard-sphere kinetic mean free path `k_B T / (√2 π d² P)`, in meters.
pub fn mean_free_path(gas: &GasConditions) -> Result<f64> {
    gas.validate()?;
    let d = gas.molecule_diameter;
    Ok(BOLTZMANN * gas.temperature / (2f64.sqrt() * PI * d * d * gas.pressure))
}

/// Knudsen number of a sphere of the given radius.
pub fn knudsen(gas: &GasConditions, sphere_radius: f64) -> Result<f64> {
    require_positive("sphere radius", sphere_radius)?;
    Ok(mean_free_path(gas)? / sphere_radius)
}

/// Slip correction `c_K = 0.31 Kn / (0.785 + 1.152 Kn + Kn²)`.
///
/// Bounded in `[0, 0.104)` for all `kn >= 0`; vanishes at both ends.
pub fn slip_correction(kn: f64) -> f64 {
    debug_assert!(kn >= 0.0, "Knudsen number must be non-negative");
    if kn.is_infinite() {
        return 0.0;
    }
    0.31 * kn / (0.785 + 1.152 * kn + kn * kn)
}

/// Damping rate (angular, s⁻¹) for an explicitly given Knudsen number.
///
/// `kn = 0` reproduces Stokes drag `6πηr/m` exactly.
pub fn damping_rate_at_knudsen(viscosity: f64, radius: f64, mass: f64, kn: f64) -> Result<f64> {
    require_positive("viscosity", viscosity)?;
    require_positive("sphere radius", radius)?;
    require_positive("sphere mass", mass)?;
    if !(kn >= 0.0) {
        return Err(crate::error::Error::invalid(
            "Knudsen number",
            format!("must be >= 0, got {kn}"),
        ));
    }
    let stokes = 6.0 * PI * viscosity * radius / mass;
    Ok(stokes * (0.619 / (0.619 + kn)) * (1.0 + slip_correction(kn)))
}

/// Gas damping rate `Γ₀` (angular, s⁻¹) for a sphere in the given gas.
pub fn damping_rate(gas: &GasConditions, sphere: &Microsphere) -> Result<f64> {
    sphere.validate()?;
    let kn = knudsen(gas, sphere.radius)?;
    damping_rate_at_knudsen(gas.viscosity, sphere.radius, sphere.mass(), kn)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn mean_free_path_at_atmosphere() {
        // Hand evaluation: 1.380649e-23 * 300 / (sqrt(2) * pi * (0.372e-9)^2 * 101325)
        let gas = GasConditions::air(101_325.0, 300.0).unwrap();
        let s = mean_free_path(&gas).unwrap();
        assert!(rel(s, 6.649e-8) < 1e-3, "s = {s}");
        let low = mean_free_path(&gas.with_pressure(1.0)).unwrap();
        assert!(rel(low, 6.74e-3) < 2e-3, "s(1 Pa) = {low}");
    }

    #[test]
    fn mean_free_path_halves_when_pressure_doubles() {
        let gas = GasConditions::air(637.0, 297.0).unwrap();
        let a = mean_free_path(&gas).unwrap();
        let b = mean_free_path(&gas.with_pressure(2.0 * 637.0)).unwrap();
        assert!(rel(a / b, 2.0) < 1e-14);
    }

    #[test]
    fn rejects_non_positive_state() {
        assert!(GasConditions::air(0.0, 300.0).is_err());
        assert!(GasConditions::air(1.0, -1.0).is_err());
        assert!(GasConditions::air(1.0, f64::NAN).is_err());
        let mut gas = GasConditions::default();
        gas.pressure = -3.0;
        assert!(mean_free_path(&gas).is_err());
    }

    #[test]
    fn knudsen_examples() {
        let gas = GasConditions::air(1.0, 300.0).unwrap();
        let s = mean_free_path(&gas).unwrap();
        assert_eq!(knudsen(&gas, s).unwrap(), 1.0);
        let kn = knudsen(&gas, 1.35e-6).unwrap();
        assert!(rel(kn, 4.99e3) < 2e-3, "Kn = {kn}");
        let kn2 = knudsen(&gas, 2.7e-6).unwrap();
        assert!(rel(kn / kn2, 2.0) < 1e-14);
        assert!(knudsen(&gas, 0.0).is_err());
    }

    #[test]
    fn slip_correction_values() {
        assert_eq!(slip_correction(0.0), 0.0);
        assert!(rel(slip_correction(1.0), 0.31 / 2.937) < 1e-14);
        let big = 1e9;
        assert!(rel(slip_correction(big), 0.31 / big) < 1e-6);
        assert_eq!(slip_correction(f64::INFINITY), 0.0);
    }

    #[test]
    fn slip_correction_is_bounded_on_log_grid() {
        let mut max = 0.0f64;
        for i in 0..=2000 {
            let kn = 10f64.powf(-6.0 + 12.0 * i as f64 / 2000.0);
            let c = slip_correction(kn);
            assert!((0.0..0.12).contains(&c), "c_K({kn}) = {c}");
            max = max.max(c);
        }
        assert!(max > 0.1);
    }

    #[test]
    fn stokes_limit_is_exact() {
        let (eta, r, m) = (1.85e-5, 1.5e-6, 2.8e-14);
        let g = damping_rate_at_knudsen(eta, r, m, 0.0).unwrap();
        assert_eq!(g, 6.0 * PI * eta * r / m);
    }

    #[test]
    fn damping_at_one_pascal() {
        let gas = GasConditions::air(1.0, 300.0).unwrap();
        let sphere = Microsphere::with_mass(1.35e-6, 2.06e-14).unwrap();
        let g = damping_rate(&gas, &sphere).unwrap();
        let hz = g / (2.0 * PI);
        assert!((hz - 0.45).abs() < 0.01, "Γ₀/2π = {hz}");
    }

    #[test]
    fn linear_in_pressure_when_rarefied() {
        let sphere = Microsphere::with_mass(1.35e-6, 2.06e-14).unwrap();
        let gas = GasConditions::air(1.0, 300.0).unwrap();
        let g1 = damping_rate(&gas, &sphere).unwrap();
        let g10 = damping_rate(&gas.with_pressure(10.0), &sphere).unwrap();
        assert!(rel(g10 / g1, 10.0) < 0.01);
    }

    #[test]
    fn rejects_bad_sphere() {
        assert!(damping_rate_at_knudsen(1.85e-5, 1e-6, 0.0, 1.0).is_err());
        assert!(damping_rate_at_knudsen(1.85e-5, -1e-6, 1e-14, 1.0).is_err());
    }
}
