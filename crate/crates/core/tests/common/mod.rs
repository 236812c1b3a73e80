#![allow(dead_code)]

use std::f64::consts::PI;

use coldtrap::gas::{damping_rate, GasConditions};
use coldtrap::spectral::Psd;
use coldtrap::trap::Microsphere;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

pub const ROOM: f64 = 297.0;

pub fn sphere() -> Microsphere {
    Microsphere::silica(3.0e-6).unwrap()
}

/// Pressure at which the gas damping of `sphere` equals `target` (s⁻¹).
pub fn pressure_for_damping(sphere: &Microsphere, target: f64) -> f64 {
    let gamma = |p: f64| damping_rate(&GasConditions::air(p, ROOM).unwrap(), sphere).unwrap();
    let (mut lo, mut hi) = (1e-8f64.ln(), 1e8f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gamma(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

/// Damped-oscillator density `2AΓ/((ω²−Ω²)² + Ω²Γ²) + floor` at `f_hz`.
pub fn line(f0: f64, gamma: f64, amp: f64, floor: f64, f_hz: f64) -> f64 {
    let w = 2.0 * PI * f0;
    let o = 2.0 * PI * f_hz;
    2.0 * amp * gamma / ((w * w - o * o).powi(2) + o * o * gamma * gamma) + floor
}

/// Spectrum sampled from `line` on `[low, high]` at `resolution`, each bin
/// multiplied by an independent Gamma(ν, 1/ν) factor (ν = `nu`; no noise
/// when `nu` is infinite).
#[allow(clippy::too_many_arguments)]
pub fn synthetic_psd(
    f0: f64,
    gamma: f64,
    amp: f64,
    floor: f64,
    low: f64,
    high: f64,
    resolution: f64,
    nu: f64,
    seed: u64,
) -> Psd {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = nu.is_finite().then(|| Gamma::new(nu, 1.0 / nu).unwrap());
    let first = (low / resolution).ceil().max(1.0) as usize;
    let last = (high / resolution).floor() as usize;
    let freqs: Vec<f64> = (first..=last).map(|k| k as f64 * resolution).collect();
    let values = freqs
        .iter()
        .map(|&f| {
            let m = line(f0, gamma, amp, floor, f);
            noise.as_ref().map_or(m, |d| m * d.sample(&mut rng))
        })
        .collect();
    let segments = if nu.is_finite() { nu as usize } else { 1000 };
    Psd {
        freqs,
        values,
        resolution,
        sample_rate: 2.0 * high,
        segment_len: (2.0 * high / resolution) as usize,
        n_segments: segments,
        equivalent_averages: segments as f64,
        windowed_variance: 0.0,
        window: "hann".into(),
        unit: "V".into(),
    }
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

pub fn variance(data: &[f64]) -> f64 {
    coldtrap::trajectory::variance(data)
}
