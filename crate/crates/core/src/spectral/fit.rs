//! Weighted least-squares fit of a damped-oscillator line to a Welch PSD.
//!
//! Model for the one-sided density (units²/Hz) at `Ω = 2πf`:
//!
//! ```text
//! y(f) = 2 A Γ / ((ω² − Ω²)² + Ω² Γ²) + floor
//! ```
//!
//! For a mode at temperature `T` seen through a detector of responsivity `β`
//! and projection `α`, `A = β² α² · 2 k_B T / m`, and the mode's contribution
//! to the signal variance is `A / (2 ω²)`.
//!
//! A Welch bin averaged over `ν` segments scatters around the true density
//! with relative standard deviation `1/√ν`, so each bin is weighted by
//! `σ_i = M_i / √ν` with `M_i` the model value. Those weights are frozen
//! during each Levenberg–Marquardt solve and recomputed from the new model a
//! few times (iteratively reweighted least squares).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::welch::{Psd, HANN_ENBW_BINS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FitWindow {
    pub fn new(low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz.is_finite() && high_hz.is_finite() && low_hz >= 0.0 && high_hz > low_hz) {
            return Err(Error::invalid(
                "fit window",
                format!("[{low_hz}, {high_hz}] Hz is not a valid interval"),
            ));
        }
        Ok(Self { low_hz, high_hz })
    }

    /// Window of `half_width` linewidths on each side of `center_hz`,
    /// clipped to positive frequencies.
    pub fn around(center_hz: f64, linewidth_hz: f64, half_width: f64) -> Result<Self> {
        let h = half_width * linewidth_hz;
        Self::new((center_hz - h).max(0.0), center_hz + h)
    }
}

/// One-sigma uncertainties of the fitted parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitUncertainties {
    pub omega: f64,
    pub gamma: f64,
    pub amplitude_scale: f64,
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// rad/s
    pub omega: f64,
    /// s⁻¹ (angular)
    pub gamma: f64,
    /// `A` in the model, signal units² · s⁻².
    pub amplitude_scale: f64,
    /// units²/Hz
    pub floor: f64,
    pub uncertainties: FitUncertainties,
    pub window: FitWindow,
    pub reduced_chi2: f64,
    pub n_points: usize,
    pub iterations: usize,
}

impl FitResult {
    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }

    pub fn linewidth_hz(&self) -> f64 {
        self.gamma / (2.0 * PI)
    }

    pub fn quality_factor(&self) -> f64 {
        self.omega / self.gamma
    }

    /// Contribution of the mode to the signal variance, units².
    pub fn mode_variance(&self) -> f64 {
        self.amplitude_scale / (2.0 * self.omega * self.omega)
    }

    /// Model density at `freq_hz`.
    pub fn model(&self, freq_hz: f64) -> f64 {
        line_model(
            &[self.omega, self.gamma.ln(), self.amplitude_scale.ln(), self.floor],
            2.0 * PI * freq_hz,
        )
        .0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub reweight_iterations: usize,
    /// Fit a white floor; otherwise it is held at zero.
    pub fit_floor: bool,
    /// Minimum number of Welch segments behind the spectrum.
    pub min_segments: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            reweight_iterations: 4,
            fit_floor: true,
            min_segments: 8,
        }
    }
}

/// Model value and gradient with respect to `[ω, ln Γ, ln A, floor]`.
fn line_model(p: &[f64; 4], big_omega: f64) -> (f64, [f64; 4]) {
    let (w, g, a) = (p[0], p[1].exp(), p[2].exp());
    let o2 = big_omega * big_omega;
    let diff = w * w - o2;
    let d = diff * diff + o2 * g * g;
    let k = g / d;
    let line = 2.0 * a * k;
    let grad = [
        -line * 4.0 * w * diff / d,
        line * (1.0 - 2.0 * o2 * g * g / d),
        line,
        1.0,
    ];
    (line + p[3], grad)
}

struct Problem<'a> {
    omegas: Vec<f64>,
    y: &'a [f64],
    fit_floor: bool,
}

impl Problem<'_> {
    fn n_params(&self) -> usize {
        if self.fit_floor {
            4
        } else {
            3
        }
    }

    fn chi2(&self, p: &[f64; 4], w: &[f64]) -> f64 {
        self.omegas
            .iter()
            .zip(self.y)
            .zip(w)
            .map(|((o, y), wi)| {
                let r = y - line_model(p, *o).0;
                wi * r * r
            })
            .sum()
    }

    /// Normal equations `JᵀWJ` and `JᵀW r`.
    fn normal(&self, p: &[f64; 4], w: &[f64]) -> ([[f64; 4]; 4], [f64; 4]) {
        let np = self.n_params();
        let mut a = [[0.0; 4]; 4];
        let mut b = [0.0; 4];
        for ((o, y), wi) in self.omegas.iter().zip(self.y).zip(w) {
            let (m, grad) = line_model(p, *o);
            let r = y - m;
            for i in 0..np {
                b[i] += wi * grad[i] * r;
                for j in 0..=i {
                    a[i][j] += wi * grad[i] * grad[j];
                }
            }
        }
        for i in 0..np {
            for j in 0..i {
                a[j][i] = a[i][j];
            }
        }
        (a, b)
    }

    fn weights(&self, p: &[f64; 4], nu: f64) -> Vec<f64> {
        self.omegas
            .iter()
            .map(|o| {
                let m = line_model(p, *o).0.max(f64::MIN_POSITIVE);
                nu / (m * m)
            })
            .collect()
    }
}

/// Solves `A x = b` for the leading `n×n` block by Gaussian elimination with
/// partial pivoting on the diagonally scaled system.
fn solve(a: &[[f64; 4]; 4], b: &[f64; 4], n: usize) -> Option<[f64; 4]> {
    let scale: Vec<f64> = (0..n).map(|i| a[i][i].abs().sqrt().max(f64::MIN_POSITIVE)).collect();
    let mut m = [[0.0; 5]; 4];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a[i][j] / (scale[i] * scale[j]);
        }
        m[i][4] = b[i] / scale[i];
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| m[r][col].abs().total_cmp(&m[s][col].abs()))?;
        if !(m[piv][col].abs() > 1e-300) {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..5 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = [0.0; 4];
    for i in 0..n {
        x[i] = m[i][4] / m[i][i] / scale[i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn invert(a: &[[f64; 4]; 4], n: usize) -> Option<[[f64; 4]; 4]> {
    let mut inv = [[0.0; 4]; 4];
    for k in 0..n {
        let mut e = [0.0; 4];
        e[k] = 1.0;
        let col = solve(a, &e, n)?;
        for i in 0..n {
            inv[i][k] = col[i];
        }
    }
    Some(inv)
}

enum Solve {
    Converged([f64; 4], usize),
    Exhausted([f64; 4], usize),
}

fn levenberg_marquardt(prob: &Problem, start: [f64; 4], w: &[f64], budget: usize) -> Solve {
    let np = prob.n_params();
    let mut p = start;
    let mut chi2 = prob.chi2(&p, w);
    let mut lambda = 1e-3;
    for it in 1..=budget {
        let (a, b) = prob.normal(&p, w);
        let mut damped = a;
        for i in 0..np {
            damped[i][i] *= 1.0 + lambda;
        }
        let Some(mut step) = solve(&damped, &b, np) else {
            return Solve::Converged(p, it);
        };
        if np == 4 && p[3] <= 0.0 && step[3] < 0.0 {
            // floor pinned at zero: take the step in the other parameters only
            match solve(&damped, &b, 3) {
                Some(s) => step = [s[0], s[1], s[2], 0.0],
                None => return Solve::Converged(p, it),
            }
        }
        let mut trial = p;
        for i in 0..np {
            trial[i] += step[i];
        }
        trial[3] = trial[3].max(0.0);
        let trial_chi2 = if trial[0] > 0.0 { prob.chi2(&trial, w) } else { f64::INFINITY };
        if trial_chi2.is_finite() && trial_chi2 <= chi2 {
            let small = (0..np).all(|i| step[i].abs() * a[i][i].sqrt() < 1e-6);
            let improvement = chi2 - trial_chi2;
            p = trial;
            chi2 = trial_chi2;
            lambda = (lambda / 10.0).max(1e-12);
            if small || improvement <= 1e-10 * chi2.max(1e-300) {
                return Solve::Converged(p, it);
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                return Solve::Converged(p, it);
            }
        }
    }
    Solve::Exhausted(p, budget)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Starting point from the peak bin, its half-maximum width and the area.
fn initial_guess(freqs: &[f64], y: &[f64], resolution: f64, fit_floor: bool) -> [f64; 4] {
    let (ipk, &peak) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("window is not empty");
    let lowest = y.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = if fit_floor { 0.5 * lowest } else { 0.0 };
    let half = floor + 0.5 * (peak - floor);
    let left = (0..ipk).rev().find(|&i| y[i] < half).unwrap_or(0);
    let right = (ipk..y.len()).find(|&i| y[i] < half).unwrap_or(y.len() - 1);
    let width_hz = ((right - left) as f64 * resolution - resolution).max(0.5 * resolution);
    let omega = 2.0 * PI * freqs[ipk];
    let gamma = 2.0 * PI * width_hz;
    let area: f64 = y.iter().map(|v| (v - floor).max(0.0)).sum::<f64>() * resolution;
    let amp = (2.0 * omega * omega * area).max(f64::MIN_POSITIVE);
    [omega, gamma.ln(), amp.ln(), floor]
}

/// Fits one resonance inside `window`.
pub fn fit_lorentzian(psd: &Psd, window: FitWindow, options: &FitOptions) -> Result<FitResult> {
    if psd.n_segments < options.min_segments {
        return Err(Error::invalid(
            "spectrum",
            format!(
                "averaged over {} segments; at least {} are required for a fit",
                psd.n_segments, options.min_segments
            ),
        ));
    }
    let range = psd.bin_range(window.low_hz, window.high_hz);
    let n_params = if options.fit_floor { 4 } else { 3 };
    if range.len() < 2 * n_params {
        return Err(Error::invalid(
            "fit window",
            format!(
                "[{}, {}] Hz holds {} bins; at least {} are required",
                window.low_hz,
                window.high_hz,
                range.len(),
                2 * n_params
            ),
        ));
    }
    let freqs = &psd.freqs[range.clone()];
    let y = &psd.values[range];
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectrum".into()));
    }
    let nu = psd.equivalent_averages;
    let med = median(y);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(med > 0.0) || (max - med) / med < 5.0 / nu.sqrt() {
        return Err(Error::NoPeak {
            low_hz: window.low_hz,
            high_hz: window.high_hz,
        });
    }

    let prob = Problem {
        omegas: freqs.iter().map(|f| 2.0 * PI * f).collect(),
        y,
        fit_floor: options.fit_floor,
    };
    let mut p = initial_guess(freqs, y, psd.resolution, options.fit_floor);
    if p[1].exp() < 4.0 * PI * psd.resolution {
        log::warn!(
            "line near {:.3} Hz is barely resolved (bin spacing {:.3e} Hz)",
            freqs[0],
            psd.resolution
        );
    }
    let mut used = 0;
    let mut weights = prob.weights(&p, nu);
    let mut converged = false;
    for _ in 0..options.reweight_iterations.max(1) {
        let budget = options.max_iterations.saturating_sub(used).max(1);
        match levenberg_marquardt(&prob, p, &weights, budget) {
            Solve::Converged(q, it) => {
                used += it;
                let settled = (q[0] - p[0]).abs() < 1e-9 * q[0]
                    && (q[1] - p[1]).abs() < 1e-7
                    && (q[2] - p[2]).abs() < 1e-7;
                p = q;
                converged = true;
                weights = prob.weights(&p, nu);
                if settled {
                    break;
                }
            }
            Solve::Exhausted(q, it) => {
                used += it;
                p = q;
                converged = false;
                weights = prob.weights(&p, nu);
                break;
            }
        }
    }

    let (a, _) = prob.normal(&p, &weights);
    let cov = invert(&a, n_params);
    let var = |i: usize| {
        cov.map(|c| (c[i][i] * HANN_ENBW_BINS).max(0.0))
            .unwrap_or(f64::INFINITY)
    };
    let gamma = p[1].exp();
    let amp = p[2].exp();
    let dof = (y.len() - n_params).max(1) as f64;
    let result = FitResult {
        omega: p[0],
        gamma,
        amplitude_scale: amp,
        floor: p[3],
        uncertainties: FitUncertainties {
            omega: var(0).sqrt(),
            gamma: gamma * var(1).sqrt(),
            amplitude_scale: amp * var(2).sqrt(),
            floor: if options.fit_floor { var(3).sqrt() } else { 0.0 },
        },
        window,
        reduced_chi2: prob.chi2(&p, &weights) / dof,
        n_points: y.len(),
        iterations: used,
    };
    if !converged {
        return Err(Error::NonConvergence {
            iterations: used,
            diagnostic: format!("iteration budget of {} exhausted", options.max_iterations),
            best: Box::new(result),
        });
    }
    if !(result.omega > 0.0 && result.gamma.is_finite() && result.amplitude_scale.is_finite()) {
        return Err(Error::NonConvergence {
            iterations: used,
            diagnostic: "parameters left the physical range".into(),
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Rejects pairs of modes closer than five linewidths of the broader one.
pub fn check_separation(fits: &[(f64, f64)]) -> Result<()> {
    for a in 0..fits.len() {
        for b in a + 1..fits.len() {
            let (fa, ga) = fits[a];
            let (fb, gb) = fits[b];
            let sep = (fa - fb).abs();
            if sep < 5.0 * ga.max(gb) {
                return Err(Error::OverlappingPeaks {
                    a,
                    b,
                    separation_hz: sep,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    /// Synthetic Welch spectrum: the exact model times Gamma(ν, 1/ν) scatter.
    fn synthetic(p: &FitResult, resolution: f64, n_bins: usize, nu: f64, seed: u64) -> Psd {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Gamma::new(nu, 1.0 / nu).unwrap();
        let freqs: Vec<f64> = (1..=n_bins).map(|i| i as f64 * resolution).collect();
        let values = freqs.iter().map(|f| p.model(*f) * dist.sample(&mut rng)).collect();
        Psd {
            freqs,
            values,
            resolution,
            sample_rate: 2.0 * resolution * n_bins as f64,
            segment_len: 2 * n_bins,
            n_segments: nu as usize,
            equivalent_averages: nu,
            windowed_variance: 0.0,
            window: "hann".into(),
            unit: "V".into(),
        }
    }

    fn truth(f0: f64, gamma: f64, amp: f64, floor: f64) -> FitResult {
        FitResult {
            omega: 2.0 * PI * f0,
            gamma,
            amplitude_scale: amp,
            floor,
            uncertainties: FitUncertainties {
                omega: 0.0,
                gamma: 0.0,
                amplitude_scale: 0.0,
                floor: 0.0,
            },
            window: FitWindow::new(0.0, 1.0).unwrap(),
            reduced_chi2: 0.0,
            n_points: 0,
            iterations: 0,
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = [6.0e4, 3.0f64.ln(), 1e-5f64.ln(), 1e-20];
        for o in [5.9e4, 6.0e4, 6.0003e4, 6.2e4] {
            let (m, g) = line_model(&p, o);
            for k in 0..4 {
                let h = if k == 0 { 1e-3 } else if k == 3 { 1e-22 } else { 1e-6 };
                let mut hi = p;
                let mut lo = p;
                hi[k] += h;
                lo[k] -= h;
                let fd = (line_model(&hi, o).0 - line_model(&lo, o).0) / (2.0 * h);
                // the ω derivative vanishes on resonance, so allow a floor
                // relative to the model value per unit of ω
                let tol = 1e-5 * g[k].abs() + 1e-6 * m / if k == 0 { p[0] } else { 1.0 };
                assert!((fd - g[k]).abs() <= tol, "param {k} at {o}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn recovers_parameters_within_errors() {
        let t = truth(1000.0, 2.0 * PI * 5.0, 1e-3, 1e-12);
        let psd = synthetic(&t, 0.5, 4000, 200.0, 11);
        let w = FitWindow::around(1000.0, 5.0, 15.0).unwrap();
        let fit = fit_lorentzian(&psd, w, &FitOptions::default()).unwrap();
        assert!((fit.omega - t.omega).abs() < 4.0 * fit.uncertainties.omega);
        assert!((fit.gamma - t.gamma).abs() < 4.0 * fit.uncertainties.gamma);
        assert!((fit.amplitude_scale / t.amplitude_scale - 1.0).abs() < 0.05);
        assert!(fit.uncertainties.gamma / fit.gamma < 0.08, "{:?}", fit.uncertainties);
        assert!(fit.reduced_chi2 > 0.7 && fit.reduced_chi2 < 1.3, "{}", fit.reduced_chi2);
    }

    #[test]
    fn floor_is_recovered_when_significant() {
        // peak about 40 times the floor, window ±25 half-widths
        let t = truth(1000.0, 2.0 * PI * 2.0, 0.1, 1e-11);
        let psd = synthetic(&t, 0.25, 8000, 100.0, 12);
        let fit = fit_lorentzian(&psd, FitWindow::new(950.0, 1050.0).unwrap(), &FitOptions::default()).unwrap();
        assert!((fit.floor / 1e-11 - 1.0).abs() < 0.05, "{}", fit.floor);
        assert!((fit.gamma / t.gamma - 1.0).abs() < 0.1);
    }

    #[test]
    fn uncertainty_tracks_scatter_over_repeats() {
        let t = truth(500.0, 2.0 * PI * 3.0, 1.0, 0.0);
        let opts = FitOptions {
            fit_floor: false,
            ..FitOptions::default()
        };
        let w = FitWindow::around(500.0, 3.0, 15.0).unwrap();
        let mut gammas = Vec::new();
        let mut sigma = 0.0;
        for seed in 0..40 {
            let psd = synthetic(&t, 0.5, 2000, 50.0, seed);
            let fit = fit_lorentzian(&psd, w, &opts).unwrap();
            gammas.push(fit.gamma);
            sigma = fit.uncertainties.gamma;
        }
        let mean = gammas.iter().sum::<f64>() / 40.0;
        let sd = (gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 39.0).sqrt();
        // synthetic bins are independent, so the Hann bandwidth factor
        // makes the reported error larger than the scatter by about √1.5
        assert!(sd < sigma && sd > 0.5 * sigma, "sd {sd} sigma {sigma}");
        assert!((mean / t.gamma - 1.0).abs() < 0.02);
    }

    #[test]
    fn flat_spectrum_has_no_peak() {
        let t = truth(1000.0, 1.0, 0.0, 1e-10);
        let mut psd = synthetic(&t, 1.0, 2000, 100.0, 3);
        for (v, f) in psd.values.iter_mut().zip(&psd.freqs) {
            *v = 1e-10 * (1.0 + 1e-3 * (f * 0.37).sin());
        }
        let err = fit_lorentzian(&psd, FitWindow::new(900.0, 1100.0).unwrap(), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoPeak { .. }));
    }

    #[test]
    fn too_few_segments_rejected() {
        let t = truth(1000.0, 10.0, 1e-3, 0.0);
        let psd = synthetic(&t, 1.0, 2000, 4.0, 3);
        let err = fit_lorentzian(&psd, FitWindow::new(900.0, 1100.0).unwrap(), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn exhausted_budget_reports_best_result() {
        let t = truth(1000.0, 2.0 * PI * 5.0, 1e-3, 1e-12);
        let psd = synthetic(&t, 0.5, 4000, 200.0, 5);
        let opts = FitOptions {
            max_iterations: 1,
            reweight_iterations: 1,
            ..FitOptions::default()
        };
        match fit_lorentzian(&psd, FitWindow::new(900.0, 1100.0).unwrap(), &opts) {
            Err(Error::NonConvergence { best, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert!(best.omega > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_modes_detected() {
        assert!(check_separation(&[(1000.0, 1.0), (1100.0, 2.0)]).is_ok());
        let err = check_separation(&[(1000.0, 1.0), (1003.0, 2.0)]).unwrap_err();
        assert!(matches!(err, Error::OverlappingPeaks { a: 0, b: 1, .. }));
    }
}
