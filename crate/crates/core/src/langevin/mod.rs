//! Stochastic dynamics of the three center-of-mass modes.
//!
//! Free runs use the exact Gaussian one-step update in [`exact`]; closed-loop
//! runs use semi-implicit Euler–Maruyama with the discrete controller in the
//! loop. Both are exposed as sample-by-sample generators ([`FreeRun`],
//! [`ClosedLoopRun`]) so long runs can be analyzed without keeping the whole
//! trajectory in memory; [`simulate_free`] and [`simulate_feedback`] collect
//! them into a [`Trajectory`].

pub mod exact;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constants::BOLTZMANN;
use crate::controller::{FeedbackSettings, FilterState, Matrix3, IDENTITY};
use crate::error::{require_non_negative, require_positive, Error, Result};
use crate::gas::{damping_rate, GasConditions};
use crate::rng::{self, DETECTOR_STREAMS, INITIAL_STATE_STREAM, THERMAL_STREAMS};
use crate::trajectory::{RunKind, Trajectory, TrajectoryMetadata};
use crate::trap::{rms_amplitude, Microsphere, TrapModes};

use exact::ExactStep;

/// Positions (m) and velocities (m/s) of the three modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub positions: [f64; 3],
    pub velocities: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub record_velocity: bool,
    /// `None` draws the start from thermal equilibrium.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<InitialState>,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: usize, seed: u64) -> Self {
        Self {
            dt,
            n_steps,
            seed,
            record_velocity: false,
            initial_state: None,
        }
    }

    /// Largest allowed step for the given modes: `1 / (50 f_max)`.
    pub fn max_dt(modes: &TrapModes) -> f64 {
        1.0 / (50.0 * modes.max_hz())
    }

    pub fn validate(&self, modes: &TrapModes) -> Result<()> {
        require_positive("time step", self.dt)?;
        let limit = Self::max_dt(modes);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "time step",
                format!("{} s exceeds 1/(50 f_max) = {limit} s", self.dt),
            ));
        }
        if self.n_steps < 2 {
            return Err(Error::invalid("n_steps", "need at least 2 steps"));
        }
        if let Some(init) = &self.initial_state {
            if init.positions.iter().chain(&init.velocities).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial state".into()));
            }
        }
        Ok(())
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

/// Linear detection model: detector `i` reads
/// `U_i = β_i (Σ_j α_ij x_j + n_i)` with white `n_i` of the given floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// V/m
    pub beta: [f64; 3],
    /// Rows are detectors, columns are modes; each row has unit norm.
    #[serde(default = "identity")]
    pub alpha: Matrix3,
    /// One-sided equivalent input noise, m/√Hz.
    #[serde(default)]
    pub noise_floor: [f64; 3],
}

fn identity() -> Matrix3 {
    IDENTITY
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::ideal([1.0; 3])
    }
}

impl DetectorModel {
    pub fn ideal(beta: [f64; 3]) -> Self {
        Self {
            beta,
            alpha: IDENTITY,
            noise_floor: [0.0; 3],
        }
    }

    pub fn with_noise_floor(mut self, floor: f64) -> Self {
        self.noise_floor = [floor; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.beta {
            require_positive("detector beta", b)?;
        }
        for n in self.noise_floor {
            require_non_negative("detector noise floor", n)?;
        }
        for (i, row) in self.alpha.iter().enumerate() {
            let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() < 1e-9) {
                return Err(Error::invalid(
                    "detector alpha",
                    format!("row {i} has norm {norm}, expected 1"),
                ));
            }
        }
        Ok(())
    }

    /// Per-sample standard deviation (m) of detector noise at `sample_rate`.
    pub fn noise_sigma(&self, sample_rate: f64) -> [f64; 3] {
        self.noise_floor.map(|s| s * (0.5 * sample_rate).sqrt())
    }
}

/// Generates detector voltages from true positions.
#[derive(Debug, Clone)]
pub struct DetectorSampler {
    model: DetectorModel,
    sigma: [f64; 3],
    rngs: [ChaCha8Rng; 3],
}

impl DetectorSampler {
    pub fn new(model: &DetectorModel, sample_rate: f64, seed: u64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model: model.clone(),
            sigma: model.noise_sigma(sample_rate),
            rngs: DETECTOR_STREAMS.map(|s| rng::stream(seed, s)),
        })
    }

    #[inline]
    pub fn measure(&mut self, x: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, u) in out.iter_mut().enumerate() {
            let a = &self.model.alpha[i];
            let noise = if self.sigma[i] > 0.0 {
                self.sigma[i] * self.rngs[i].sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            *u = self.model.beta[i] * (a[0] * x[0] + a[1] * x[1] + a[2] * x[2] + noise);
        }
        out
    }
}

/// Equilibrium draw: independent Gaussians with `var(x) = k_B T/(m ω²)` and
/// `var(v) = k_B T/m` on every axis.
pub fn draw_thermal_initial_state(
    sphere: &Microsphere,
    modes: &TrapModes,
    t0: f64,
    seed: u64,
) -> Result<InitialState> {
    require_non_negative("initial temperature", t0)?;
    draw_initial_state_per_axis(sphere, modes, [t0; 3], seed)
}

fn draw_initial_state_per_axis(
    sphere: &Microsphere,
    modes: &TrapModes,
    temperatures: [f64; 3],
    seed: u64,
) -> Result<InitialState> {
    sphere.validate()?;
    modes.validate()?;
    let m = sphere.mass();
    let mut rng = rng::stream(seed, INITIAL_STATE_STREAM);
    let mut state = InitialState {
        positions: [0.0; 3],
        velocities: [0.0; 3],
    };
    for j in 0..3 {
        let kt_m = BOLTZMANN * temperatures[j] / m;
        let zx: f64 = rng.sample(StandardNormal);
        let zv: f64 = rng.sample(StandardNormal);
        state.positions[j] = (kt_m).sqrt() / modes.omega[j] * zx;
        state.velocities[j] = kt_m.sqrt() * zv;
    }
    Ok(state)
}

/// Steps discarded at the start: `min(5 / Γ_slowest, duration / 10)`.
pub fn burn_in_steps(slowest_damping: f64, dt: f64, n_steps: usize) -> usize {
    let by_damping = 5.0 / slowest_damping;
    let by_length = 0.1 * n_steps as f64 * dt;
    (by_damping.min(by_length) / dt).round() as usize
}

/// One recorded sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub voltage: [f64; 3],
}

/// Free thermal motion, sample by sample, with the exact update.
#[derive(Debug, Clone)]
pub struct FreeRun {
    steps: [ExactStep; 3],
    x: [f64; 3],
    v: [f64; 3],
    rngs: [ChaCha8Rng; 3],
    gamma0: f64,
}

impl FreeRun {
    pub fn new(
        sphere: &Microsphere,
        modes: &TrapModes,
        gas: &GasConditions,
        sim: &SimConfig,
    ) -> Result<Self> {
        sim.validate(modes)?;
        let gamma0 = damping_rate(gas, sphere)?;
        let kt_m = BOLTZMANN * gas.temperature / sphere.mass();
        let init = match sim.initial_state {
            Some(s) => s,
            None => draw_thermal_initial_state(sphere, modes, gas.temperature, sim.seed)?,
        };
        Ok(Self {
            steps: [0, 1, 2].map(|j| ExactStep::new(modes.omega[j], gamma0, kt_m, sim.dt)),
            x: init.positions,
            v: init.velocities,
            rngs: THERMAL_STREAMS.map(|s| rng::stream(sim.seed, s)),
            gamma0,
        })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Returns the current state, then advances one step.
    #[inline]
    pub fn next_state(&mut self) -> ([f64; 3], [f64; 3]) {
        let out = (self.x, self.v);
        for j in 0..3 {
            let z1: f64 = self.rngs[j].sample(StandardNormal);
            let z2: f64 = self.rngs[j].sample(StandardNormal);
            let (x, v) = self.steps[j].advance(self.x[j], self.v[j], z1, z2);
            self.x[j] = x;
            self.v[j] = v;
        }
        out
    }
}

/// Free thermal motion of all three modes.
pub fn simulate_free(
    sphere: &Microsphere,
    modes: &TrapModes,
    gas: &GasConditions,
    sim: &SimConfig,
) -> Result<Trajectory> {
    let mut run = FreeRun::new(sphere, modes, gas, sim)?;
    let burn = burn_in_steps(run.gamma0(), sim.dt, sim.n_steps);
    for _ in 0..burn {
        run.next_state();
    }
    let n = sim.n_steps - burn;
    let mut positions = Vec::with_capacity(n);
    let mut velocities = sim.record_velocity.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let (x, v) = run.next_state();
        positions.push(x);
        if let Some(vs) = velocities.as_mut() {
            vs.push(v);
        }
    }
    let metadata = TrajectoryMetadata::new(
        RunKind::Free,
        sphere,
        modes,
        gas,
        None,
        None,
        sim,
        burn,
        run.gamma0(),
    );
    Trajectory::new(sim.dt, positions, velocities, None, metadata)
}

/// Adds detector voltages to a trajectory that has only positions (e.g. a
/// free run), using the trajectory's own seed for the noise streams.
pub fn attach_detector(traj: &mut Trajectory, detector: &DetectorModel) -> Result<()> {
    let mut sampler = DetectorSampler::new(detector, traj.sample_rate(), traj.metadata.sim.seed)?;
    traj.voltages = Some(traj.positions.iter().map(|x| sampler.measure(x)).collect());
    traj.metadata.detector = Some(detector.clone());
    Ok(())
}

/// Closed-loop motion: thermal force plus controller force computed from the
/// detector output, semi-implicit Euler–Maruyama.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    omega_sq: [f64; 3],
    gamma0: f64,
    dt: f64,
    mass: f64,
    force_sigma: f64,
    x: [f64; 3],
    v: [f64; 3],
    rngs: [ChaCha8Rng; 3],
    detector: DetectorSampler,
    loop_beta: [f64; 3],
    controller: FilterState,
    limit: f64,
    step: usize,
}

impl ClosedLoopRun {
    pub fn new(
        sphere: &Microsphere,
        modes: &TrapModes,
        gas: &GasConditions,
        detector: &DetectorModel,
        fb: &FeedbackSettings,
        sim: &SimConfig,
    ) -> Result<Self> {
        sim.validate(modes)?;
        let fs = sim.sample_rate();
        let mass = sphere.mass();
        let controller = FilterState::reset(fb, fs, mass)?;
        let gamma0 = damping_rate(gas, sphere)?;
        let t0 = gas.temperature;
        let init = match sim.initial_state {
            Some(s) => s,
            None => {
                let temps = [0, 1, 2].map(|j| t0 * gamma0 / (gamma0 + fb.gain[j]));
                draw_initial_state_per_axis(sphere, modes, temps, sim.seed)?
            }
        };
        let slowest = modes.omega.iter().copied().fold(f64::INFINITY, f64::min);
        let limit = 1e6 * rms_amplitude(slowest, t0, mass)?;
        Ok(Self {
            omega_sq: modes.omega.map(|w| w * w),
            gamma0,
            dt: sim.dt,
            mass,
            force_sigma: (2.0 * gamma0 * BOLTZMANN * t0 / mass * sim.dt).sqrt(),
            x: init.positions,
            v: init.velocities,
            rngs: THERMAL_STREAMS.map(|s| rng::stream(sim.seed, s)),
            detector: DetectorSampler::new(detector, fs, sim.seed)?,
            loop_beta: fb.loop_beta.unwrap_or(detector.beta),
            controller,
            limit,
            step: 0,
        })
    }

    pub fn gamma0(&self) -> f64 {
        self.gamma0
    }

    /// Measures, records and advances one step.
    #[inline]
    pub fn next_sample(&mut self) -> Result<Sample> {
        let voltage = self.detector.measure(&self.x);
        let measured = [0, 1, 2].map(|i| voltage[i] / self.loop_beta[i]);
        let force = self.controller.process_sample(measured)?;
        let sample = Sample {
            position: self.x,
            velocity: self.v,
            voltage,
        };
        for j in 0..3 {
            let z: f64 = self.rngs[j].sample(StandardNormal);
            let accel = -self.omega_sq[j] * self.x[j] - self.gamma0 * self.v[j] + force[j] / self.mass;
            self.v[j] += self.dt * accel + self.force_sigma * z;
            self.x[j] += self.dt * self.v[j];
            if !(self.x[j].abs() <= self.limit) {
                return Err(Error::Unstable {
                    axis: j,
                    step: self.step,
                    value: self.x[j].abs(),
                    limit: self.limit,
                });
            }
        }
        self.step += 1;
        Ok(sample)
    }
}

pub fn simulate_feedback(
    sphere: &Microsphere,
    modes: &TrapModes,
    gas: &GasConditions,
    detector: &DetectorModel,
    fb: &FeedbackSettings,
    sim: &SimConfig,
) -> Result<Trajectory> {
    let mut run = ClosedLoopRun::new(sphere, modes, gas, detector, fb, sim)?;
    let slowest = run.gamma0() + fb.gain.iter().copied().fold(f64::INFINITY, f64::min);
    let burn = burn_in_steps(slowest, sim.dt, sim.n_steps);
    for _ in 0..burn {
        run.next_sample()?;
    }
    let n = sim.n_steps - burn;
    let mut positions = Vec::with_capacity(n);
    let mut voltages = Vec::with_capacity(n);
    let mut velocities = sim.record_velocity.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        let s = run.next_sample()?;
        positions.push(s.position);
        voltages.push(s.voltage);
        if let Some(vs) = velocities.as_mut() {
            vs.push(s.velocity);
        }
    }
    let metadata = TrajectoryMetadata::new(
        RunKind::Feedback,
        sphere,
        modes,
        gas,
        Some(detector),
        Some(fb),
        sim,
        burn,
        run.gamma0(),
    );
    Trajectory::new(sim.dt, positions, velocities, Some(voltages), metadata)
}
