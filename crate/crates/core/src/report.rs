//! Closed-form scalar summary of a configuration. No randomness involved.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{require_positive, Result};
use crate::gas::damping_rate;
use crate::trap::{quality_factor, reduction_lifetime, rms_amplitude, thermal_occupancy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisScalars {
    pub frequency_hz: f64,
    /// Γ/2π used for Q, Hz.
    pub linewidth_hz: f64,
    pub quality_factor: f64,
    pub x_rms_hot_m: f64,
    pub x_rms_cold_m: f64,
    pub occupancy_hot: f64,
    pub occupancy_cold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarReport {
    pub config_hash: String,
    pub mass_kg: f64,
    pub radius_m: f64,
    pub pressure_pa: f64,
    pub hot_temperature_k: f64,
    pub cold_temperature_k: f64,
    /// `Γ_fb/Γ₀` that cools from the hot to the cold temperature.
    pub required_gain_ratio: f64,
    pub reduction_lifetime_s: f64,
    pub axes: [AxisScalars; 3],
}

impl ScalarReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "axis,frequency_hz,linewidth_hz,quality_factor,x_rms_hot_m,x_rms_cold_m,occupancy_hot,occupancy_cold\n",
        );
        for (j, a) in self.axes.iter().enumerate() {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                ["x", "y", "z"][j],
                a.frequency_hz,
                a.linewidth_hz,
                a.quality_factor,
                a.x_rms_hot_m,
                a.x_rms_cold_m,
                a.occupancy_hot,
                a.occupancy_cold
            ));
        }
        out.push_str(&format!("# reduction_lifetime_s,{:e}\n", self.reduction_lifetime_s));
        out
    }
}

pub fn report_scalars(cfg: &ExperimentConfig) -> Result<ScalarReport> {
    cfg.validate()?;
    let hot = cfg.gas.temperature;
    let cold = require_positive("cold temperature", cfg.report.cold_temperature)?;
    let mass = cfg.sphere.mass();
    let modes = cfg.trap_modes()?;
    let gamma = match cfg.report.linewidth_hz {
        Some(l) => 2.0 * PI * l,
        None => damping_rate(&cfg.gas, &cfg.sphere)?,
    };
    let axis = |j: usize| -> Result<AxisScalars> {
        let w = modes.omega[j];
        Ok(AxisScalars {
            frequency_hz: modes.hz()[j],
            linewidth_hz: gamma / (2.0 * PI),
            quality_factor: quality_factor(w, gamma)?,
            x_rms_hot_m: rms_amplitude(w, hot, mass)?,
            x_rms_cold_m: rms_amplitude(w, cold, mass)?,
            occupancy_hot: thermal_occupancy(w, hot)?,
            occupancy_cold: thermal_occupancy(w, cold)?,
        })
    };
    Ok(ScalarReport {
        config_hash: cfg.config_hash(),
        mass_kg: mass,
        radius_m: cfg.sphere.radius,
        pressure_pa: cfg.gas.pressure,
        hot_temperature_k: hot,
        cold_temperature_k: cold,
        required_gain_ratio: hot / cold - 1.0,
        reduction_lifetime_s: reduction_lifetime(&cfg.sphere)?,
        axes: [axis(0)?, axis(1)?, axis(2)?],
    })
}
