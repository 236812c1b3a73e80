//! Discrete-time cold-damping controller.
//!
//! Each axis runs the measured position through a second-order Butterworth
//! high-pass, a second-order Butterworth low-pass (both bilinear with
//! prewarping), and a first-difference differentiator scaled by the sample
//! rate. The resulting velocity estimate is turned into a force
//! `-m Γ_fb v̂`, mixed across axes by the crosstalk matrix, and offset.
//! The force computed from sample `n` is emitted on call `n + 1`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, require_positive, Error, Result};

pub type Matrix3 = [[f64; 3]; 3];

pub const IDENTITY: Matrix3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Second-order IIR section, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn prewarp(cutoff_hz: f64, sample_rate: f64) -> f64 {
        (PI * cutoff_hz / sample_rate).tan()
    }

    pub fn butterworth_lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = Self::prewarp(cutoff_hz, sample_rate);
        let q = FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Self {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            z: [0.0; 2],
        }
    }

    pub fn butterworth_highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = Self::prewarp(cutoff_hz, sample_rate);
        let q = FRAC_1_SQRT_2;
        let norm = 1.0 / (1.0 + k / q + k * k);
        Self {
            b: [norm, -2.0 * norm, norm],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
            z: [0.0; 2],
        }
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.z = [0.0; 2];
    }

    /// Frequency response at `z = e^{iθ}`, `θ = 2π f / fs`.
    pub fn response(&self, theta: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -theta);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Controller configuration. Gains are given directly as target cold-damping
/// rates `Γ_fb` (s⁻¹, angular) per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSettings {
    pub gain: [f64; 3],
    /// Hz
    #[serde(default = "default_low")]
    pub bandpass_low: f64,
    /// Hz
    #[serde(default = "default_high")]
    pub bandpass_high: f64,
    /// Row `i` gives the contribution of each axis' command to the force on axis `i`.
    #[serde(default = "default_crosstalk")]
    pub crosstalk: Matrix3,
    /// N
    #[serde(default)]
    pub force_offset: [f64; 3],
    /// Volts-per-meter used to convert detector voltages back to meters inside
    /// the loop. `None` means the detector's true calibration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_beta: Option<[f64; 3]>,
}

fn default_low() -> f64 {
    100.0
}

fn default_high() -> f64 {
    300e3
}

fn default_crosstalk() -> Matrix3 {
    IDENTITY
}

impl Default for FeedbackSettings {
    fn default() -> Self {
        Self {
            gain: [0.0; 3],
            bandpass_low: default_low(),
            bandpass_high: default_high(),
            crosstalk: IDENTITY,
            force_offset: [0.0; 3],
            loop_beta: None,
        }
    }
}

impl FeedbackSettings {
    pub fn with_gain(gain: [f64; 3]) -> Self {
        Self {
            gain,
            ..Self::default()
        }
    }

    /// Symmetric off-diagonal coupling `eps` between every pair of axes.
    pub fn with_uniform_crosstalk(mut self, eps: f64) -> Self {
        for (i, row) in self.crosstalk.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                *c = if i == j { 1.0 } else { eps };
            }
        }
        self
    }

    /// Checks everything that does not depend on the sample rate.
    pub fn validate(&self) -> Result<()> {
        for g in self.gain {
            require_non_negative("feedback gain", g)?;
        }
        require_positive("bandpass low edge", self.bandpass_low)?;
        require_positive("bandpass high edge", self.bandpass_high)?;
        if self.bandpass_low >= self.bandpass_high {
            return Err(Error::invalid(
                "bandpass",
                format!(
                    "low edge {} Hz must be below high edge {} Hz",
                    self.bandpass_low, self.bandpass_high
                ),
            ));
        }
        for (i, row) in self.crosstalk.iter().enumerate() {
            if row[i] != 1.0 {
                return Err(Error::invalid(
                    "crosstalk",
                    format!("diagonal entry {i} must be 1, got {}", row[i]),
                ));
            }
            if row.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("crosstalk matrix".into()));
            }
        }
        if self.force_offset.iter().any(|f| !f.is_finite()) {
            return Err(Error::NonFinite("force offset".into()));
        }
        if let Some(beta) = self.loop_beta {
            for b in beta {
                require_positive("loop beta", b)?;
            }
        }
        Ok(())
    }

    pub fn validate_for_rate(&self, sample_rate: f64) -> Result<()> {
        self.validate()?;
        require_positive("sample rate", sample_rate)?;
        if sample_rate <= 2.0 * self.bandpass_high {
            return Err(Error::invalid(
                "sample rate",
                format!(
                    "{sample_rate} Hz must exceed twice the bandpass high edge ({} Hz)",
                    self.bandpass_high
                ),
            ));
        }
        Ok(())
    }

    /// Position-to-velocity-estimate transfer function at angular frequency
    /// `omega`, including the one-sample output latency.
    pub fn transfer(&self, omega: f64, sample_rate: f64) -> Complex64 {
        let theta = omega / sample_rate;
        let hp = Biquad::butterworth_highpass(self.bandpass_low, sample_rate).response(theta);
        let lp = Biquad::butterworth_lowpass(self.bandpass_high, sample_rate).response(theta);
        let z1 = Complex64::from_polar(1.0, -theta);
        let diff = (1.0 - z1) * sample_rate;
        hp * lp * diff * z1
    }
}

#[derive(Debug, Clone)]
struct AxisFilter {
    highpass: Biquad,
    lowpass: Biquad,
    previous: f64,
}

impl AxisFilter {
    #[inline]
    fn velocity(&mut self, x: f64, sample_rate: f64) -> f64 {
        let y = self.lowpass.process(self.highpass.process(x));
        let v = (y - self.previous) * sample_rate;
        self.previous = y;
        v
    }
}

/// Running controller state for all three axes.
#[derive(Debug, Clone)]
pub struct FilterState {
    settings: FeedbackSettings,
    sample_rate: f64,
    mass: f64,
    axes: [AxisFilter; 3],
    pending: [f64; 3],
    poisoned: bool,
}

impl FilterState {
    /// Fresh, zeroed state with coefficients designed for `sample_rate`.
    pub fn reset(settings: &FeedbackSettings, sample_rate: f64, mass: f64) -> Result<Self> {
        settings.validate_for_rate(sample_rate)?;
        require_positive("mass", mass)?;
        let axis = AxisFilter {
            highpass: Biquad::butterworth_highpass(settings.bandpass_low, sample_rate),
            lowpass: Biquad::butterworth_lowpass(settings.bandpass_high, sample_rate),
            previous: 0.0,
        };
        Ok(Self {
            settings: settings.clone(),
            sample_rate,
            mass,
            axes: [axis.clone(), axis.clone(), axis],
            pending: settings.force_offset,
            poisoned: false,
        })
    }

    pub fn settings(&self) -> &FeedbackSettings {
        &self.settings
    }

    /// Feeds one measured position (m) and returns the force (N) to apply
    /// over the next integration step.
    pub fn process_sample(&mut self, measured: [f64; 3]) -> Result<[f64; 3]> {
        if self.poisoned {
            return Err(Error::Poisoned);
        }
        if measured.iter().any(|x| !x.is_finite()) {
            self.poisoned = true;
            return Err(Error::NonFinite("controller input".into()));
        }
        let mut command = [0.0; 3];
        for (j, axis) in self.axes.iter_mut().enumerate() {
            let v = axis.velocity(measured[j], self.sample_rate);
            command[j] = -self.mass * self.settings.gain[j] * v;
        }
        let mut next = self.settings.force_offset;
        for (i, row) in self.settings.crosstalk.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                next[i] += c * command[j];
            }
        }
        Ok(std::mem::replace(&mut self.pending, next))
    }
}

/// Realized damping rate of one axis at a mode frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveDamping {
    /// s⁻¹
    pub rate: f64,
    /// realized / nominal
    pub ratio: f64,
    pub warning: Option<String>,
}

/// Damping rate actually delivered by the discrete filter chain at
/// `mode_omega`: `Γ_fb · Re[H(ω) / iω]`, i.e. the component of the force in
/// phase with velocity.
pub fn effective_cold_damping(
    settings: &FeedbackSettings,
    axis: usize,
    mode_omega: f64,
    sample_rate: f64,
) -> Result<EffectiveDamping> {
    settings.validate_for_rate(sample_rate)?;
    if axis >= 3 {
        return Err(Error::invalid("axis", format!("{axis} is not in 0..3")));
    }
    require_positive("mode angular frequency", mode_omega)?;
    let f = mode_omega / (2.0 * PI);
    if f < settings.bandpass_low || f > settings.bandpass_high {
        return Err(Error::invalid(
            "mode frequency",
            format!(
                "{f} Hz lies outside the passband [{}, {}] Hz",
                settings.bandpass_low, settings.bandpass_high
            ),
        ));
    }
    let warning = if f < 2.0 * settings.bandpass_low || f > 0.5 * settings.bandpass_high {
        let msg = format!("mode at {f:.1} Hz is within one octave of a band edge");
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    let h = settings.transfer(mode_omega, sample_rate);
    let ratio = (h / Complex64::new(0.0, mode_omega)).re;
    Ok(EffectiveDamping {
        rate: settings.gain[axis] * ratio,
        ratio,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 1.0e6;
    const MASS: f64 = 2.8e-14;

    fn settings(gain: f64) -> FeedbackSettings {
        FeedbackSettings::with_gain([gain; 3])
    }

    fn run(state: &mut FilterState, input: &[[f64; 3]]) -> Vec<[f64; 3]> {
        input.iter().map(|x| state.process_sample(*x).unwrap()).collect()
    }

    fn sine(n: usize, f: f64, amp: f64) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| {
                let s = amp * (2.0 * PI * f * i as f64 / FS).sin();
                [s, 0.0, 0.0]
            })
            .collect()
    }

    #[test]
    fn zero_input_gives_zero_force() {
        let mut st = FilterState::reset(&settings(1e3), FS, MASS).unwrap();
        for f in run(&mut st, &vec![[0.0; 3]; 1000]) {
            assert_eq!(f, [0.0; 3]);
        }
    }

    #[test]
    fn rejects_rate_at_band_edge() {
        let s = settings(1e3);
        assert!(FilterState::reset(&s, s.bandpass_high, MASS).is_err());
        assert!(FilterState::reset(&s, 2.0 * s.bandpass_high, MASS).is_err());
        assert!(FilterState::reset(&s, 2.0 * s.bandpass_high + 1.0, MASS).is_ok());
    }

    #[test]
    fn reset_is_deterministic() {
        let s = settings(500.0);
        let input = sine(5000, 9095.0, 1e-9);
        let a = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &input);
        let b = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &input);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_gain_outputs_offset() {
        let mut s = settings(0.0);
        s.force_offset = [1e-15, -2e-15, 3e-16];
        let mut st = FilterState::reset(&s, FS, MASS).unwrap();
        for f in run(&mut st, &sine(2000, 5000.0, 1e-8)) {
            assert_eq!(f, s.force_offset);
        }
    }

    #[test]
    fn sinusoid_gets_velocity_force() {
        // steady state over the last whole periods of a mid-band tone
        let gain = 2000.0;
        let f0 = 5000.0;
        let amp = 1e-9;
        let n = 200_000;
        let mut st = FilterState::reset(&settings(gain), FS, MASS).unwrap();
        let out = run(&mut st, &sine(n, f0, amp));
        let w0 = 2.0 * PI * f0;
        // project the force onto sin and cos over an integer number of periods
        let start = 100_000;
        let len = 200 * (FS / f0) as usize;
        let (mut s_sin, mut s_cos) = (0.0, 0.0);
        for (i, f) in out.iter().enumerate().skip(start).take(len) {
            let t = i as f64 / FS;
            s_sin += f[0] * (w0 * t).sin();
            s_cos += f[0] * (w0 * t).cos();
        }
        let a_sin = 2.0 * s_sin / len as f64;
        let a_cos = 2.0 * s_cos / len as f64;
        let amplitude = a_sin.hypot(a_cos);
        let ideal = MASS * gain * amp * w0;
        assert!((amplitude / ideal - 1.0).abs() < 0.05, "amplitude ratio {}", amplitude / ideal);
        // force ≈ -A cos: phase of force relative to position sin(wt)
        let phase = a_cos.atan2(a_sin); // position has phase 0
        let lead = phase - (-PI / 2.0);
        assert!(lead.abs() < 10f64.to_radians(), "phase error {} deg", lead.to_degrees());
    }

    #[test]
    fn crosstalk_leaks_partner_command() {
        let eps = 0.05;
        let mut s = settings(0.0);
        s.gain = [0.0, 1500.0, 0.0];
        s.crosstalk[0][1] = eps;
        let mut st = FilterState::reset(&s, FS, MASS).unwrap();
        let input: Vec<[f64; 3]> = (0..50_000)
            .map(|i| [0.0, 1e-9 * (2.0 * PI * 5000.0 * i as f64 / FS).sin(), 0.0])
            .collect();
        let out = run(&mut st, &input);
        for f in &out[1000..] {
            assert!((f[0] - eps * f[1]).abs() <= 1e-12 * f[1].abs().max(1e-30));
            assert_eq!(f[2], 0.0);
        }
    }

    #[test]
    fn non_finite_input_poisons_until_reset() {
        let s = settings(10.0);
        let mut st = FilterState::reset(&s, FS, MASS).unwrap();
        assert!(st.process_sample([f64::NAN, 0.0, 0.0]).is_err());
        assert!(matches!(st.process_sample([0.0; 3]), Err(Error::Poisoned)));
        let mut st = FilterState::reset(&s, FS, MASS).unwrap();
        assert!(st.process_sample([0.0; 3]).is_ok());
    }

    #[test]
    fn linear_in_input() {
        let s = settings(800.0);
        let x = sine(20_000, 7000.0, 1e-9);
        let y: Vec<[f64; 3]> = (0..20_000)
            .map(|i| {
                let t = i as f64 / FS;
                [2e-10 * (2.0 * PI * 3100.0 * t).cos(), 5e-10 * (2.0 * PI * 900.0 * t).sin(), -1e-10]
            })
            .collect();
        let (a, b) = (0.7, -1.9);
        let mix: Vec<[f64; 3]> = x
            .iter()
            .zip(&y)
            .map(|(p, q)| [0, 1, 2].map(|k| a * p[k] + b * q[k]))
            .collect();
        let fx = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &x);
        let fy = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &y);
        let fm = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &mix);
        let scale = fm.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..fm.len() {
            for k in 0..3 {
                let expect = a * fx[i][k] + b * fy[i][k];
                assert!((fm[i][k] - expect).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn axes_are_separable_with_identity_crosstalk() {
        let s = settings(1000.0);
        let base = sine(10_000, 6000.0, 1e-9);
        let mut other = base.clone();
        for (i, v) in other.iter_mut().enumerate() {
            v[1] = 3e-9 * (i as f64 * 0.01).sin();
            v[2] = -1e-9;
        }
        let fa = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &base);
        let fb = run(&mut FilterState::reset(&s, FS, MASS).unwrap(), &other);
        for (p, q) in fa.iter().zip(&fb) {
            assert_eq!(p[0], q[0]);
        }
    }

    #[test]
    fn passband_phase_lead_is_ninety_degrees() {
        let s = settings(1.0);
        // 1 kHz to 10 kHz, where the trap modes sit; higher up the sample
        // latency and the low-pass add noticeable lag at a 1 MHz rate
        for k in 0..=20 {
            let f = 1000.0 * 10f64.powf(k as f64 / 20.0);
            let h = s.transfer(2.0 * PI * f, FS);
            let lead = h.arg().to_degrees();
            assert!((lead - 90.0).abs() < 10.0, "f = {f}: lead {lead}");
        }
    }

    #[test]
    fn effective_damping_mid_band_and_edge() {
        let s = settings(1000.0);
        let mid = (s.bandpass_low * s.bandpass_high).sqrt();
        let e = effective_cold_damping(&s, 1, 2.0 * PI * mid, FS).unwrap();
        assert!((0.95..=1.05).contains(&e.ratio), "mid-band ratio {}", e.ratio);
        assert!(e.warning.is_none());
        let edge = effective_cold_damping(&s, 0, 2.0 * PI * s.bandpass_low, FS).unwrap();
        assert!(edge.ratio < 0.8, "edge ratio {}", edge.ratio);
        assert!(edge.warning.is_some());
        let zero = effective_cold_damping(&settings(0.0), 2, 2.0 * PI * mid, FS).unwrap();
        assert_eq!(zero.rate, 0.0);
        assert!(effective_cold_damping(&s, 0, 2.0 * PI * 50.0, FS).is_err());
    }

    /// Oracle: drive the running filter with a long tone and measure the
    /// in-phase velocity component; compare against the analytic response.
    #[test]
    fn transfer_function_matches_time_domain_sweep() {
        let s = settings(1.0);
        for f in [300.0, 2000.0, 9095.0, 60_000.0] {
            let w = 2.0 * PI * f;
            let n = 400_000;
            let mut st = FilterState::reset(&s, FS, 1.0).unwrap();
            let out = run(&mut st, &sine(n, f, 1.0));
            let periods = ((n / 2) as f64 * f / FS).floor();
            let len = (periods * FS / f).round() as usize;
            let start = n - len;
            let (mut s_sin, mut s_cos) = (0.0, 0.0);
            for (i, v) in out.iter().enumerate().skip(start) {
                let t = i as f64 / FS;
                // force = -v̂, so v̂ = -f
                s_sin += -v[0] * (w * t).sin();
                s_cos += -v[0] * (w * t).cos();
            }
            let measured = Complex64::new(2.0 * s_sin / len as f64, 2.0 * s_cos / len as f64);
            let h = s.transfer(w, FS);
            assert!((measured - h).norm() / h.norm() < 2e-3, "f = {f}: {measured} vs {h}");
        }
    }
}
