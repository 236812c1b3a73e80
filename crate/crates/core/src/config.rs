//! Experiment configuration file (TOML).
//!
//! Every section except `sphere`, `modes` and `gas` may be omitted. Values
//! given on the command line replace the corresponding file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::FeedbackSettings;
use crate::error::{require_positive, Error, Result};
use crate::gas::GasConditions;
use crate::langevin::{DetectorModel, SimConfig};
use crate::trap::{Microsphere, TrapModes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    /// Mode frequencies ω/2π of x, y, z in Hz.
    pub frequencies_hz: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// Time step in seconds; the largest admissible step when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub record_velocity: bool,
}

fn default_steps() -> usize {
    1_000_000
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: None,
            n_steps: default_steps(),
            seed: 0,
            record_velocity: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    None,
    /// Grid values are pressures in Pa.
    Pressure,
    /// Grid values are feedback-to-gas damping ratios `Γ_fb / Γ₀`, applied to all axes.
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub axis: SweepAxis,
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Analyzed duration per grid point in units of `1/Γ_tot` of the slowest axis.
    #[serde(default = "default_linewidths")]
    pub linewidths_per_point: f64,
    /// Cap on simulated steps per grid point.
    #[serde(default = "default_max_samples")]
    pub max_samples: u64,
    /// Welch segment duration in units of `1/Γ_tot`, rounded up to a power of two in samples.
    #[serde(default = "default_segment_linewidths")]
    pub segment_linewidths: f64,
    #[serde(default = "default_min_segments")]
    pub min_segments: usize,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    /// Half width of the fit window in predicted linewidths.
    #[serde(default = "default_half_width")]
    pub fit_half_width: f64,
    /// Pressure of the uncooled calibration run; the highest grid pressure
    /// (or the configured gas pressure) when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_pressure: Option<f64>,
    /// Duration of the calibration run in units of `1/Γ₀`.
    #[serde(default = "default_reference_linewidths")]
    pub reference_linewidths: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_linewidths() -> f64 {
    50.0
}
fn default_max_samples() -> u64 {
    20_000_000
}
fn default_segment_linewidths() -> f64 {
    100.0
}
fn default_min_segments() -> usize {
    16
}
fn default_overlap() -> f64 {
    0.5
}
fn default_half_width() -> f64 {
    15.0
}
fn default_reference_linewidths() -> f64 {
    2000.0
}
fn default_workers() -> usize {
    1
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: SweepAxis::None,
            grid: Vec::new(),
            linewidths_per_point: default_linewidths(),
            max_samples: default_max_samples(),
            segment_linewidths: default_segment_linewidths(),
            min_segments: default_min_segments(),
            overlap: default_overlap(),
            fit_half_width: default_half_width(),
            reference_pressure: None,
            reference_linewidths: default_reference_linewidths(),
            workers: default_workers(),
        }
    }
}

/// Inputs for the closed-form scalar report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Cooled mode temperature, K.
    #[serde(default = "default_cold")]
    pub cold_temperature: f64,
    /// Measured linewidth Γ/2π (Hz) used for Q; the gas-model value when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linewidth_hz: Option<f64>,
}

fn default_cold() -> f64 {
    1.5e-3
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            cold_temperature: default_cold(),
            linewidth_hz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sphere: Microsphere,
    pub modes: ModesConfig,
    pub gas: GasConditions,
    #[serde(default)]
    pub detector: DetectorModel,
    #[serde(default)]
    pub feedback: FeedbackSettings,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(sphere: Microsphere, modes_hz: [f64; 3], gas: GasConditions) -> Self {
        Self {
            sphere,
            modes: ModesConfig {
                frequencies_hz: modes_hz,
            },
            gas,
            detector: DetectorModel::default(),
            feedback: FeedbackSettings::default(),
            sim: SimSection::default(),
            sweep: SweepConfig::default(),
            report: ReportConfig::default(),
            output_dir: default_output(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn trap_modes(&self) -> Result<TrapModes> {
        TrapModes::from_hz(self.modes.frequencies_hz)
    }

    /// Step for free runs: the configured one or `1/(50 f_max)`.
    pub fn free_dt(&self) -> Result<f64> {
        Ok(self.sim.dt.unwrap_or(SimConfig::max_dt(&self.trap_modes()?)))
    }

    /// Step for closed-loop runs: the configured one, or the largest step
    /// that also samples at least 10/3 times the controller's upper band edge.
    pub fn feedback_dt(&self) -> Result<f64> {
        let cap = SimConfig::max_dt(&self.trap_modes()?);
        Ok(self
            .sim
            .dt
            .unwrap_or_else(|| cap.min(0.3 / self.feedback.bandpass_high)))
    }

    pub fn feedback_enabled(&self) -> bool {
        self.feedback.gain.iter().any(|g| *g != 0.0)
    }

    /// Simulation settings for a single run of the configured experiment.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let dt = if self.feedback_enabled() {
            self.feedback_dt()?
        } else {
            self.free_dt()?
        };
        let mut sim = SimConfig::new(dt, self.sim.n_steps, self.sim.seed);
        sim.record_velocity = self.sim.record_velocity;
        Ok(sim)
    }

    pub fn validate(&self) -> Result<()> {
        self.sphere.validate()?;
        let modes = self.trap_modes()?;
        self.gas.validate()?;
        self.detector.validate()?;
        self.feedback.validate()?;
        if let Some(dt) = self.sim.dt {
            SimConfig::new(dt, self.sim.n_steps.max(2), 0).validate(&modes)?;
        }
        if self.sim.seed > i64::MAX as u64 {
            return Err(Error::invalid("seed", "must not exceed 2^63 - 1 (TOML integer range)"));
        }
        if self.sim.n_steps < 2 {
            return Err(Error::invalid("n_steps", "need at least 2 steps"));
        }
        let sw = &self.sweep;
        for v in &sw.grid {
            require_positive("sweep grid value", *v)?;
        }
        if sw.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep grid must be strictly increasing".into()));
        }
        if sw.axis != SweepAxis::None && sw.grid.is_empty() {
            return Err(Error::Config("sweep axis set but grid is empty".into()));
        }
        require_positive("linewidths_per_point", sw.linewidths_per_point)?;
        require_positive("segment_linewidths", sw.segment_linewidths)?;
        require_positive("fit_half_width", sw.fit_half_width)?;
        require_positive("reference_linewidths", sw.reference_linewidths)?;
        if let Some(p) = sw.reference_pressure {
            require_positive("reference pressure", p)?;
        }
        if !(0.0..=0.9).contains(&sw.overlap) {
            return Err(Error::invalid("overlap", format!("{} not in [0, 0.9]", sw.overlap)));
        }
        if sw.max_samples < 2 {
            return Err(Error::invalid("max_samples", "need at least 2"));
        }
        if sw.min_segments < 1 {
            return Err(Error::invalid("min_segments", "must be at least 1"));
        }
        if sw.workers == 0 {
            return Err(Error::invalid("workers", "must be at least 1"));
        }
        require_positive("cold temperature", self.report.cold_temperature)?;
        if let Some(l) = self.report.linewidth_hz {
            require_positive("report linewidth", l)?;
        }
        Ok(())
    }

    /// Short SHA-256 digest identifying this exact configuration.
    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes to JSON");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}
