//! Parameter sweeps over pressure or feedback gain.
//!
//! Each grid point is an independent run whose seed is derived from the base
//! seed and the grid value alone, so points can execute in any order or in
//! parallel and a permuted grid yields permuted rows. Samples are streamed
//! straight into Welch accumulators; no trajectory is kept in memory.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, SweepAxis};
use crate::constants::BOLTZMANN;
use crate::controller::FeedbackSettings;
use crate::error::{Error, Result};
use crate::gas::{damping_rate, GasConditions};
use crate::langevin::{burn_in_steps, ClosedLoopRun, DetectorSampler, FreeRun, SimConfig};
use crate::rng::derive_seed;
use crate::spectral::{
    calibrate_from_reference, fit_lorentzian, mode_temperature, next_pow2, Calibration, FitOptions,
    FitWindow, Psd, WelchAccumulator,
};
use crate::trap::{cooled_temperature, TrapModes};

/// Seed tag of the uncooled calibration run.
const REFERENCE_TAG: u64 = u64::MAX;
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Linewidth,
    Cooling,
}

/// Results for one mode at one grid point. Fields that could not be
/// computed are `None` and the reason is in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisResult {
    /// Nominal feedback damping rate applied, s⁻¹.
    pub gain: f64,
    /// Γ_tot/2π expected from the gas model and the nominal gain, Hz.
    pub predicted_linewidth_hz: f64,
    /// T₀Γ₀/(Γ₀ + Γ_fb), K.
    pub predicted_temperature: f64,
    pub frequency_hz: Option<f64>,
    pub linewidth_hz: Option<f64>,
    pub linewidth_err_hz: Option<f64>,
    /// Calibrated spectral temperature, K (cooling sweeps only).
    pub temperature: Option<f64>,
    pub temperature_err: Option<f64>,
    pub temperature_from_fit: Option<f64>,
    pub occupancy: Option<f64>,
    /// `m ω² var(x) / k_B` from the true simulated positions, K.
    pub position_temperature: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Grid value: pressure (Pa) or gain ratio Γ_fb/Γ₀.
    pub value: f64,
    pub pressure: f64,
    /// Gas damping rate from the gas model, s⁻¹.
    pub gamma0: f64,
    pub seed: u64,
    pub config_hash: String,
    pub n_samples: usize,
    pub axes: [AxisResult; 3],
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub axis: SweepAxis,
    pub config_hash: String,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Flat table, one line per grid point and axis.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "value,pressure_pa,axis,gain,gamma0,predicted_linewidth_hz,linewidth_hz,linewidth_err_hz,\
             frequency_hz,predicted_temperature_k,temperature_k,temperature_err_k,temperature_from_fit_k,\
             position_temperature_k,occupancy,n_samples,seed,config_hash,error\n",
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            for (j, a) in r.axes.iter().enumerate() {
                let err = a.error.as_ref().or(r.error.as_ref()).cloned().unwrap_or_default();
                out.push_str(&format!(
                    "{:e},{:e},{},{:e},{:e},{:e},{},{},{},{:e},{},{},{},{:e},{},{},{},{},\"{}\"\n",
                    r.value,
                    r.pressure,
                    ["x", "y", "z"][j],
                    a.gain,
                    r.gamma0,
                    a.predicted_linewidth_hz,
                    opt(a.linewidth_hz),
                    opt(a.linewidth_err_hz),
                    opt(a.frequency_hz),
                    a.predicted_temperature,
                    opt(a.temperature),
                    opt(a.temperature_err),
                    opt(a.temperature_from_fit),
                    a.position_temperature,
                    opt(a.occupancy),
                    r.n_samples,
                    r.seed,
                    r.config_hash,
                    err.replace('"', "'"),
                ));
            }
        }
        out
    }
}

/// Largest power-of-two segment giving at least `min_segments` segments,
/// aiming at `segment_linewidths / gamma` seconds.
fn segment_len(cfg: &ExperimentConfig, gamma: f64, sample_rate: f64, n: usize) -> usize {
    let sw = &cfg.sweep;
    let target = next_pow2((sw.segment_linewidths / gamma * sample_rate).ceil() as usize);
    let per = 1.0 + (sw.min_segments.max(1) - 1) as f64 * (1.0 - sw.overlap);
    let cap = (n as f64 / per).floor().max(1.0) as usize;
    let cap = if cap.is_power_of_two() { cap } else { cap.next_power_of_two() / 2 };
    target.min(cap).max(16)
}

fn steps_for(cfg: &ExperimentConfig, slowest: f64, dt: f64) -> usize {
    let wanted = (cfg.sweep.linewidths_per_point / slowest / dt).ceil();
    // the burn-in comes on top of the analyzed span
    let burn = (5.0 / slowest / dt).ceil().min(wanted / 9.0);
    ((wanted + burn) as u64).clamp(2, cfg.sweep.max_samples) as usize
}

/// Streams per-axis signals into Welch accumulators and position moments.
struct Collector {
    welch: Vec<WelchAccumulator>,
    buffers: [Vec<f64>; 3],
    sum: [f64; 3],
    sum_sq: [f64; 3],
    count: usize,
}

impl Collector {
    fn new(lens: [usize; 3], sample_rate: f64, overlap: f64) -> Result<Self> {
        Ok(Self {
            welch: lens
                .iter()
                .map(|&n| WelchAccumulator::new(n, sample_rate, overlap))
                .collect::<Result<_>>()?,
            buffers: [0, 1, 2].map(|_| Vec::with_capacity(CHUNK)),
            sum: [0.0; 3],
            sum_sq: [0.0; 3],
            count: 0,
        })
    }

    #[inline]
    fn push(&mut self, x: &[f64; 3], u: &[f64; 3]) -> Result<()> {
        for j in 0..3 {
            self.sum[j] += x[j];
            self.sum_sq[j] += x[j] * x[j];
            self.buffers[j].push(u[j]);
        }
        self.count += 1;
        if self.buffers[0].len() == CHUNK {
            self.flush()?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        for j in 0..3 {
            self.welch[j].push(&self.buffers[j])?;
            self.buffers[j].clear();
        }
        Ok(())
    }

    fn position_variance(&self, j: usize) -> f64 {
        let n = self.count as f64;
        let mean = self.sum[j] / n;
        self.sum_sq[j] / n - mean * mean
    }
}

fn empty_axis(gain: f64, gamma0: f64, t0: f64) -> AxisResult {
    AxisResult {
        gain,
        predicted_linewidth_hz: (gamma0 + gain) / (2.0 * PI),
        predicted_temperature: cooled_temperature(t0, gamma0, gain).unwrap_or(f64::NAN),
        frequency_hz: None,
        linewidth_hz: None,
        linewidth_err_hz: None,
        temperature: None,
        temperature_err: None,
        temperature_from_fit: None,
        occupancy: None,
        position_temperature: f64::NAN,
        error: None,
    }
}

struct PointSpectra {
    psds: Vec<Result<Psd>>,
    position_variance: [f64; 3],
    n_samples: usize,
}

fn fit_options(cfg: &ExperimentConfig) -> FitOptions {
    FitOptions {
        min_segments: cfg.sweep.min_segments.min(8),
        ..FitOptions::default()
    }
}

fn fit_window(cfg: &ExperimentConfig, modes: &TrapModes, axis: usize, gamma: f64, fs: f64) -> Result<FitWindow> {
    let f = modes.hz()[axis];
    let w = FitWindow::around(f, gamma / (2.0 * PI), cfg.sweep.fit_half_width)?;
    FitWindow::new(w.low_hz, w.high_hz.min(0.5 * fs))
}

/// Free run at `gas` streamed through the detector.
fn free_spectra(cfg: &ExperimentConfig, gas: &GasConditions, seed: u64) -> Result<PointSpectra> {
    let modes = cfg.trap_modes()?;
    let gamma0 = damping_rate(gas, &cfg.sphere)?;
    let dt = cfg.free_dt()?;
    let fs = 1.0 / dt;
    let n_steps = steps_for(cfg, gamma0, dt);
    let sim = SimConfig::new(dt, n_steps, seed);
    let mut run = FreeRun::new(&cfg.sphere, &modes, gas, &sim)?;
    let mut detector = DetectorSampler::new(&cfg.detector, fs, seed)?;
    let burn = burn_in_steps(gamma0, dt, n_steps);
    for _ in 0..burn {
        run.next_state();
    }
    let n = n_steps - burn;
    let seg = segment_len(cfg, gamma0, fs, n);
    let mut col = Collector::new([seg; 3], fs, cfg.sweep.overlap)?;
    for _ in 0..n {
        let (x, _) = run.next_state();
        let u = detector.measure(&x);
        col.push(&x, &u)?;
    }
    col.flush()?;
    Ok(PointSpectra {
        psds: col.welch.iter().map(|w| w.finish()).collect(),
        position_variance: [0, 1, 2].map(|j| col.position_variance(j)),
        n_samples: n,
    })
}

/// Closed-loop run streamed through the detector.
fn loop_spectra(
    cfg: &ExperimentConfig,
    gas: &GasConditions,
    fb: &FeedbackSettings,
    seed: u64,
    n_steps: usize,
) -> Result<PointSpectra> {
    let modes = cfg.trap_modes()?;
    let gamma0 = damping_rate(gas, &cfg.sphere)?;
    let dt = cfg.feedback_dt()?;
    let fs = 1.0 / dt;
    let sim = SimConfig::new(dt, n_steps, seed);
    let mut run = ClosedLoopRun::new(&cfg.sphere, &modes, gas, &cfg.detector, fb, &sim)?;
    let slowest = gamma0 + fb.gain.iter().copied().fold(f64::INFINITY, f64::min);
    let burn = burn_in_steps(slowest, dt, n_steps);
    for _ in 0..burn {
        run.next_sample()?;
    }
    let n = n_steps - burn;
    let lens = [0, 1, 2].map(|j| segment_len(cfg, gamma0 + fb.gain[j], fs, n));
    let mut col = Collector::new(lens, fs, cfg.sweep.overlap)?;
    for _ in 0..n {
        let s = run.next_sample()?;
        col.push(&s.position, &s.voltage)?;
    }
    col.flush()?;
    Ok(PointSpectra {
        psds: col.welch.iter().map(|w| w.finish()).collect(),
        position_variance: [0, 1, 2].map(|j| col.position_variance(j)),
        n_samples: n,
    })
}

fn point_seed(base: u64, value: f64) -> u64 {
    derive_seed(base, value.to_bits())
}

fn run_grid<F>(cfg: &ExperimentConfig, f: F) -> Result<Vec<SweepRow>>
where
    F: Fn(f64) -> SweepRow + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| cfg.sweep.grid.par_iter().map(|&v| f(v)).collect());
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(rows)
}

/// Free-dynamics linewidths against the gas model over a pressure grid.
pub fn run_linewidth_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.sweep.axis != SweepAxis::Pressure {
        return Err(Error::Config("linewidth sweep needs sweep.axis = \"pressure\"".into()));
    }
    if cfg.feedback_enabled() {
        return Err(Error::Config("linewidth sweep requires feedback gains of zero".into()));
    }
    let modes = cfg.trap_modes()?;
    let hash = cfg.config_hash();
    let t0 = cfg.gas.temperature;
    let mass = cfg.sphere.mass();
    let rows = run_grid(cfg, |pressure| {
        let seed = point_seed(cfg.sim.seed, pressure);
        let gas = cfg.gas.with_pressure(pressure);
        let gamma0 = damping_rate(&gas, &cfg.sphere).unwrap_or(f64::NAN);
        let mut row = SweepRow {
            value: pressure,
            pressure,
            gamma0,
            seed,
            config_hash: hash.clone(),
            n_samples: 0,
            axes: [0, 1, 2].map(|_| empty_axis(0.0, gamma0, t0)),
            error: None,
        };
        let spectra = match free_spectra(cfg, &gas, seed) {
            Ok(s) => s,
            Err(e) => {
                row.error = Some(e.to_string());
                return row;
            }
        };
        row.n_samples = spectra.n_samples;
        let fs = 1.0 / cfg.free_dt().unwrap_or(f64::NAN);
        for (j, axis) in row.axes.iter_mut().enumerate() {
            let w = modes.omega[j];
            axis.position_temperature = mass * w * w * spectra.position_variance[j] / BOLTZMANN;
            let fit = spectra.psds[j]
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|psd| {
                    let win = fit_window(cfg, &modes, j, gamma0, fs).map_err(|e| e.to_string())?;
                    fit_lorentzian(psd, win, &fit_options(cfg)).map_err(|e| e.to_string())
                });
            match fit {
                Ok(f) => {
                    axis.frequency_hz = Some(f.frequency_hz());
                    axis.linewidth_hz = Some(f.linewidth_hz());
                    axis.linewidth_err_hz = Some(f.uncertainties.gamma / (2.0 * PI));
                }
                Err(e) => axis.error = Some(e),
            }
        }
        row
    })?;
    Ok(SweepResult {
        kind: SweepKind::Linewidth,
        axis: cfg.sweep.axis,
        config_hash: hash,
        base_seed: cfg.sim.seed,
        calibration: None,
        rows,
    })
}

/// Uncooled closed-loop run at the reference pressure and the calibration
/// obtained from it.
pub fn reference_calibration(cfg: &ExperimentConfig) -> Result<Calibration> {
    let modes = cfg.trap_modes()?;
    let pressure = cfg.sweep.reference_pressure.unwrap_or(match cfg.sweep.axis {
        SweepAxis::Pressure => cfg.sweep.grid.iter().copied().fold(cfg.gas.pressure, f64::max),
        _ => cfg.gas.pressure,
    });
    let gas = cfg.gas.with_pressure(pressure);
    let gamma0 = damping_rate(&gas, &cfg.sphere)?;
    let dt = cfg.feedback_dt()?;
    let fs = 1.0 / dt;
    let fb = FeedbackSettings {
        gain: [0.0; 3],
        ..cfg.feedback.clone()
    };
    let wanted = (cfg.sweep.reference_linewidths / gamma0 / dt).ceil() as u64;
    let n_steps = wanted.clamp(2, cfg.sweep.max_samples) as usize;
    let seed = derive_seed(cfg.sim.seed, REFERENCE_TAG);
    let spectra = loop_spectra(cfg, &gas, &fb, seed, n_steps)?;
    let psds = spectra.psds.into_iter().collect::<Result<Vec<_>>>()?;
    let psds: [Psd; 3] = psds.try_into().expect("three axes");
    let windows = [
        fit_window(cfg, &modes, 0, gamma0, fs)?,
        fit_window(cfg, &modes, 1, gamma0, fs)?,
        fit_window(cfg, &modes, 2, gamma0, fs)?,
    ];
    let reference = calibrate_from_reference(&psds, &windows, gas.temperature, cfg.sphere.mass(), &fit_options(cfg))?;
    Ok(reference.calibration)
}

/// Calibrated mode temperatures under feedback over a pressure or gain grid.
///
/// For a pressure grid the configured gains are held fixed; for a gain grid
/// every axis receives `value · Γ₀` at the configured pressure.
pub fn run_cooling_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let axis_kind = cfg.sweep.axis;
    if axis_kind == SweepAxis::None {
        return Err(Error::Config("cooling sweep needs sweep.axis = \"pressure\" or \"gain\"".into()));
    }
    if axis_kind == SweepAxis::Pressure && !cfg.feedback_enabled() {
        log::warn!("cooling sweep with all feedback gains at zero");
    }
    let modes = cfg.trap_modes()?;
    let hash = cfg.config_hash();
    let t0 = cfg.gas.temperature;
    let mass = cfg.sphere.mass();
    let calibration = reference_calibration(cfg)?;
    let dt = cfg.feedback_dt()?;
    let fs = 1.0 / dt;
    let rows = run_grid(cfg, |value| {
        let seed = point_seed(cfg.sim.seed, value);
        let pressure = match axis_kind {
            SweepAxis::Pressure => value,
            _ => cfg.gas.pressure,
        };
        let gas = cfg.gas.with_pressure(pressure);
        let gamma0 = damping_rate(&gas, &cfg.sphere).unwrap_or(f64::NAN);
        let mut fb = cfg.feedback.clone();
        if axis_kind == SweepAxis::Gain {
            fb.gain = [value * gamma0; 3];
        }
        let mut row = SweepRow {
            value,
            pressure,
            gamma0,
            seed,
            config_hash: hash.clone(),
            n_samples: 0,
            axes: [0, 1, 2].map(|j| empty_axis(fb.gain[j], gamma0, t0)),
            error: None,
        };
        let slowest = gamma0 + fb.gain.iter().copied().fold(f64::INFINITY, f64::min);
        let n_steps = steps_for(cfg, slowest, dt);
        let spectra = match loop_spectra(cfg, &gas, &fb, seed, n_steps) {
            Ok(s) => s,
            Err(e) => {
                row.error = Some(e.to_string());
                return row;
            }
        };
        row.n_samples = spectra.n_samples;
        for (j, axis) in row.axes.iter_mut().enumerate() {
            let w = modes.omega[j];
            axis.position_temperature = mass * w * w * spectra.position_variance[j] / BOLTZMANN;
            let result = spectra.psds[j].as_ref().map_err(|e| e.to_string()).and_then(|psd| {
                let win = fit_window(cfg, &modes, j, gamma0 + fb.gain[j], fs).map_err(|e| e.to_string())?;
                let fit = fit_lorentzian(psd, win, &fit_options(cfg)).map_err(|e| e.to_string())?;
                let temp = mode_temperature(psd, &fit, &calibration, j).map_err(|e| e.to_string())?;
                Ok((fit, temp))
            });
            match result {
                Ok((fit, temp)) => {
                    axis.frequency_hz = Some(fit.frequency_hz());
                    axis.linewidth_hz = Some(fit.linewidth_hz());
                    axis.linewidth_err_hz = Some(fit.uncertainties.gamma / (2.0 * PI));
                    axis.temperature = Some(temp.temperature);
                    axis.temperature_err =
                        Some(temp.temperature * fit.uncertainties.amplitude_scale / fit.amplitude_scale);
                    axis.temperature_from_fit = Some(temp.temperature_from_fit);
                    axis.occupancy = Some(temp.occupancy);
                    axis.error = temp.warning;
                }
                Err(e) => axis.error = Some(e),
            }
        }
        row
    })?;
    Ok(SweepResult {
        kind: SweepKind::Cooling,
        axis: axis_kind,
        config_hash: hash,
        base_seed: cfg.sim.seed,
        calibration: Some(calibration),
        rows,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
