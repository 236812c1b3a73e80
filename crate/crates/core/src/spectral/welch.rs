//! Welch-averaged periodograms.
//!
//! Each segment is multiplied by a periodic Hann window after removing its
//! window-weighted mean, so the zero-frequency bin vanishes and is omitted.
//! The one-sided density is scaled by `2 / (fs Σw²)`, which makes
//! `Σ S_k Δf` equal the mean windowed variance of the segments exactly.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// One-sided power spectral density in units²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psd {
    /// Hz, starting at the first nonzero bin.
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    /// Bin spacing, Hz.
    pub resolution: f64,
    pub sample_rate: f64,
    pub segment_len: usize,
    pub n_segments: usize,
    /// Effective number of independent averages given the overlap.
    pub equivalent_averages: f64,
    /// Mean over segments of `Σ(w·(x − x̄_w))² / Σw²`.
    pub windowed_variance: f64,
    pub window: String,
    /// Unit of the underlying signal, e.g. "V" or "m"; densities are unit²/Hz.
    pub unit: String,
}

impl Psd {
    /// Index range `[lo, hi)` of bins whose frequency lies in `[low_hz, high_hz]`.
    pub fn bin_range(&self, low_hz: f64, high_hz: f64) -> std::ops::Range<usize> {
        let lo = self.freqs.partition_point(|&f| f < low_hz);
        let hi = self.freqs.partition_point(|&f| f <= high_hz);
        lo..hi.max(lo)
    }

    /// `Σ S_k Δf` over the bins in `[low_hz, high_hz]`.
    pub fn band_power(&self, low_hz: f64, high_hz: f64) -> f64 {
        self.values[self.bin_range(low_hz, high_hz)].iter().sum::<f64>() * self.resolution
    }

    pub fn with_unit(mut self, unit: &str) -> Self {
        self.unit = unit.to_string();
        self
    }

    pub fn total_power(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.resolution
    }
}

/// One-sided cross spectral density `2 conj(A) B / (fs Σw²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPsd {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
    pub resolution: f64,
    pub n_segments: usize,
}

pub const MIN_SEGMENT_LEN: usize = 16;

/// Equivalent noise bandwidth of the periodic Hann window, in bins.
pub const HANN_ENBW_BINS: f64 = 1.5;

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch's estimate of independent averages for overlapping segments.
fn equivalent_averages(window: &[f64], hop: usize, k: usize) -> f64 {
    let n = window.len();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let mut sum = 0.0;
    let mut lag = 1;
    while lag * hop < n && lag < k {
        let shift = lag * hop;
        let c: f64 = (0..n - shift).map(|i| window[i] * window[i + shift]).sum::<f64>() / norm;
        sum += (1.0 - lag as f64 / k as f64) * c * c;
        lag += 1;
    }
    k as f64 / (1.0 + 2.0 * sum)
}

struct SegmentTransform {
    window: Vec<f64>,
    window_sum: f64,
    window_power: f64,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SegmentTransform {
    fn new(n: usize) -> Self {
        let window = hann(n);
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            window_sum: window.iter().sum(),
            window_power: window.iter().map(|w| w * w).sum(),
            window,
            fft,
            buf: vec![Complex64::default(); n],
            scratch,
        }
    }

    /// Transforms one segment in place and returns its windowed variance.
    fn run(&mut self, seg: &[f64]) -> f64 {
        let mean = seg.iter().zip(&self.window).map(|(x, w)| x * w).sum::<f64>() / self.window_sum;
        let mut energy = 0.0;
        for ((b, x), w) in self.buf.iter_mut().zip(seg).zip(&self.window) {
            let y = w * (x - mean);
            energy += y * y;
            *b = Complex64::new(y, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        energy / self.window_power
    }

    fn n_bins(&self) -> usize {
        self.window.len() / 2
    }

    /// One-sided scale for bin `k` (1-based, up to Nyquist).
    fn bin_scale(&self, k: usize, sample_rate: f64) -> f64 {
        let n = self.window.len();
        let edge = n % 2 == 0 && k == n / 2;
        (if edge { 1.0 } else { 2.0 }) / (sample_rate * self.window_power)
    }
}

fn check_segment(segment_len: usize, overlap: f64, sample_rate: f64) -> Result<usize> {
    require_positive("sample rate", sample_rate)?;
    if segment_len < MIN_SEGMENT_LEN {
        return Err(Error::invalid(
            "segment length",
            format!("{segment_len} < {MIN_SEGMENT_LEN} samples"),
        ));
    }
    if !(0.0..=0.9).contains(&overlap) {
        return Err(Error::invalid("overlap", format!("{overlap} not in [0, 0.9]")));
    }
    let hop = ((1.0 - overlap) * segment_len as f64).round() as usize;
    Ok(hop.clamp(1, segment_len))
}

/// Streaming Welch estimator: feed samples in any chunking, then [`finish`].
///
/// [`finish`]: WelchAccumulator::finish
pub struct WelchAccumulator {
    transform: SegmentTransform,
    sample_rate: f64,
    hop: usize,
    pending: Vec<f64>,
    sums: Vec<f64>,
    variance_sum: f64,
    n_segments: usize,
}

impl WelchAccumulator {
    pub fn new(segment_len: usize, sample_rate: f64, overlap: f64) -> Result<Self> {
        let hop = check_segment(segment_len, overlap, sample_rate)?;
        let transform = SegmentTransform::new(segment_len);
        let n_bins = transform.n_bins();
        Ok(Self {
            transform,
            sample_rate,
            hop,
            pending: Vec::with_capacity(2 * segment_len),
            sums: vec![0.0; n_bins],
            variance_sum: 0.0,
            n_segments: 0,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.transform.window.len()
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn push(&mut self, samples: &[f64]) -> Result<()> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Welch input".into()));
        }
        let n = self.segment_len();
        self.pending.extend_from_slice(samples);
        let mut start = 0;
        while self.pending.len() - start >= n {
            self.variance_sum += self.transform.run(&self.pending[start..start + n]);
            for (k, s) in self.sums.iter_mut().enumerate() {
                *s += self.transform.buf[k + 1].norm_sqr();
            }
            self.n_segments += 1;
            start += self.hop;
        }
        self.pending.drain(..start);
        Ok(())
    }

    pub fn push_one(&mut self, sample: f64) -> Result<()> {
        self.push(std::slice::from_ref(&sample))
    }

    pub fn finish(&self) -> Result<Psd> {
        if self.n_segments == 0 {
            return Err(Error::invalid(
                "Welch input",
                format!("shorter than one segment of {} samples", self.segment_len()),
            ));
        }
        let n = self.segment_len();
        let k = self.n_segments as f64;
        let resolution = self.sample_rate / n as f64;
        let values = self
            .sums
            .iter()
            .enumerate()
            .map(|(i, s)| s * self.transform.bin_scale(i + 1, self.sample_rate) / k)
            .collect();
        Ok(Psd {
            freqs: (1..=self.sums.len()).map(|i| i as f64 * resolution).collect(),
            values,
            resolution,
            sample_rate: self.sample_rate,
            segment_len: n,
            n_segments: self.n_segments,
            equivalent_averages: equivalent_averages(&self.transform.window, self.hop, self.n_segments),
            windowed_variance: self.variance_sum / k,
            window: "hann".into(),
            unit: "V".into(),
        })
    }
}

/// Welch PSD of a whole record.
pub fn welch(data: &[f64], sample_rate: f64, segment_len: usize, overlap: f64) -> Result<Psd> {
    let mut acc = WelchAccumulator::new(segment_len, sample_rate, overlap)?;
    acc.push(data)?;
    acc.finish()
}

/// Welch cross spectrum of two equally long records.
pub fn welch_csd(
    a: &[f64],
    b: &[f64],
    sample_rate: f64,
    segment_len: usize,
    overlap: f64,
) -> Result<CrossPsd> {
    if a.len() != b.len() {
        return Err(Error::invalid(
            "cross spectrum input",
            format!("lengths differ ({} vs {})", a.len(), b.len()),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cross spectrum input".into()));
    }
    let hop = check_segment(segment_len, overlap, sample_rate)?;
    if a.len() < segment_len {
        return Err(Error::invalid("cross spectrum input", "shorter than one segment"));
    }
    let mut ta = SegmentTransform::new(segment_len);
    let mut tb = SegmentTransform::new(segment_len);
    let n_bins = ta.n_bins();
    let mut sums = vec![Complex64::default(); n_bins];
    let mut count = 0;
    let mut start = 0;
    while start + segment_len <= a.len() {
        ta.run(&a[start..start + segment_len]);
        tb.run(&b[start..start + segment_len]);
        for (k, s) in sums.iter_mut().enumerate() {
            *s += ta.buf[k + 1].conj() * tb.buf[k + 1];
        }
        count += 1;
        start += hop;
    }
    let resolution = sample_rate / segment_len as f64;
    Ok(CrossPsd {
        freqs: (1..=n_bins).map(|i| i as f64 * resolution).collect(),
        values: sums
            .iter()
            .enumerate()
            .map(|(i, s)| s * (ta.bin_scale(i + 1, sample_rate) / count as f64))
            .collect(),
        resolution,
        n_segments: count,
    })
}

/// Smallest power of two that is at least `n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}
