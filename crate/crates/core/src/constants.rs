//! Physical constants and material defaults (SI units throughout).

use serde::Serialize;

/// Boltzmann constant, J/K (exact since the 2019 SI redefinition).
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Newtonian constant of gravitation, m³/(kg·s²).
pub const GRAVITATIONAL: f64 = 6.674_30e-11;

/// Effective hard-sphere diameter of an air molecule, m.
pub const AIR_MOLECULE_DIAMETER: f64 = 0.372e-9;

/// Dynamic viscosity of air near 300 K, Pa·s.
pub const AIR_VISCOSITY: f64 = 1.85e-5;

/// Density of fused silica microspheres, kg/m³.
pub const SILICA_DENSITY: f64 = 1980.0;

/// Room temperature used by the defaults, K.
pub const ROOM_TEMPERATURE: f64 = 297.0;

/// Everything above as one serializable record (for the `constants` subcommand).
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsReport {
    pub boltzmann_j_per_k: f64,
    pub hbar_j_s: f64,
    pub gravitational_m3_per_kg_s2: f64,
    pub air_molecule_diameter_m: f64,
    pub air_viscosity_pa_s: f64,
    pub silica_density_kg_per_m3: f64,
    pub room_temperature_k: f64,
    pub source: &'static str,
}

impl ConstantsReport {
    pub fn current() -> Self {
        Self {
            boltzmann_j_per_k: BOLTZMANN,
            hbar_j_s: HBAR,
            gravitational_m3_per_kg_s2: GRAVITATIONAL,
            air_molecule_diameter_m: AIR_MOLECULE_DIAMETER,
            air_viscosity_pa_s: AIR_VISCOSITY,
            silica_density_kg_per_m3: SILICA_DENSITY,
            room_temperature_k: ROOM_TEMPERATURE,
            source: "CODATA 2018 (k_B, hbar, G); hard-sphere air model; silica density default",
        }
    }
}
