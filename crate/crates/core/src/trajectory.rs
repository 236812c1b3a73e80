//! Recorded simulation output and the provenance needed to reproduce it.

use serde::{Deserialize, Serialize};

use crate::controller::FeedbackSettings;
use crate::error::{Error, Result};
use crate::gas::GasConditions;
use crate::langevin::{DetectorModel, SimConfig};
use crate::trap::{Microsphere, TrapModes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Free,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetadata {
    pub kind: RunKind,
    pub sphere: Microsphere,
    pub modes: TrapModes,
    pub gas: GasConditions,
    pub detector: Option<DetectorModel>,
    pub feedback: Option<FeedbackSettings>,
    pub sim: SimConfig,
    /// Steps simulated and discarded before the first recorded sample.
    pub burn_in_steps: usize,
    /// Gas damping rate used by the run, s⁻¹.
    pub gamma0: f64,
    pub code_version: String,
}

impl TrajectoryMetadata {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: RunKind,
        sphere: &Microsphere,
        modes: &TrapModes,
        gas: &GasConditions,
        detector: Option<&DetectorModel>,
        feedback: Option<&FeedbackSettings>,
        sim: &SimConfig,
        burn_in_steps: usize,
        gamma0: f64,
    ) -> Self {
        Self {
            kind,
            sphere: *sphere,
            modes: *modes,
            gas: *gas,
            detector: detector.cloned(),
            feedback: feedback.cloned(),
            sim: sim.clone(),
            burn_in_steps,
            gamma0,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Uniformly sampled record. Rows are time steps, columns are the x, y, z axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub positions: Vec<[f64; 3]>,
    pub velocities: Option<Vec<[f64; 3]>>,
    pub voltages: Option<Vec<[f64; 3]>>,
    pub metadata: TrajectoryMetadata,
}

impl Trajectory {
    pub fn new(
        dt: f64,
        positions: Vec<[f64; 3]>,
        velocities: Option<Vec<[f64; 3]>>,
        voltages: Option<Vec<[f64; 3]>>,
        metadata: TrajectoryMetadata,
    ) -> Result<Self> {
        let n = positions.len();
        for (name, col) in [("velocities", &velocities), ("voltages", &voltages)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::invalid(
                        "trajectory",
                        format!("{name} has {} rows, positions have {n}", c.len()),
                    ));
                }
            }
        }
        Ok(Self {
            dt,
            positions,
            velocities,
            voltages,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    pub fn position_axis(&self, axis: usize) -> Vec<f64> {
        self.positions.iter().map(|r| r[axis]).collect()
    }

    pub fn velocity_axis(&self, axis: usize) -> Option<Vec<f64>> {
        self.velocities.as_ref().map(|v| v.iter().map(|r| r[axis]).collect())
    }

    pub fn voltage_axis(&self, axis: usize) -> Option<Vec<f64>> {
        self.voltages.as_ref().map(|v| v.iter().map(|r| r[axis]).collect())
    }

    /// Detector voltages if recorded, otherwise positions (an ideal β = 1 detector).
    pub fn signal_axis(&self, axis: usize) -> Vec<f64> {
        self.voltage_axis(axis).unwrap_or_else(|| self.position_axis(axis))
    }
}

pub fn mean_square(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64
}

pub fn variance(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}
