//! Exact one-step update of a thermally driven damped harmonic oscillator.
//!
//! For `dx = v dt`, `dv = (-ω² x - Γ v) dt + σ dW` with `σ² = 2Γ k_B T / m`,
//! the state after `dt` is Gaussian with mean `M(dt) · (x, v)` and covariance
//! `Σ(dt) = σ² ∫₀^dt (g g, g g'; g g', g' g')(s) ds`, where `g` is the
//! position impulse response. The integrals are evaluated with composite
//! Gauss–Legendre quadrature (no cancellation for small `dt`); once the step
//! spans more than one damping time the stationary identity
//! `Σ = Σ∞ - M Σ∞ Mᵀ` is used instead.

/// Eight-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Damped basis functions `e^{-Γs/2} S(s)` and `e^{-Γs/2} C(s)`, where
/// `S, C` are the sin/cos (or sinh/cosh) pair for `q = ω² - Γ²/4`.
#[derive(Debug, Clone, Copy)]
struct Basis {
    q: f64,
    half_gamma: f64,
}

impl Basis {
    fn eval(&self, s: f64) -> (f64, f64) {
        let q = self.q;
        let h = self.half_gamma;
        let qs2 = q * s * s;
        if qs2.abs() < 1e-4 {
            let decay = (-h * s).exp();
            let sv = s * (1.0 - qs2 / 6.0 + qs2 * qs2 / 120.0 - qs2 * qs2 * qs2 / 5040.0);
            let cv = 1.0 - qs2 / 2.0 + qs2 * qs2 / 24.0 - qs2 * qs2 * qs2 / 720.0;
            (decay * sv, decay * cv)
        } else if q > 0.0 {
            let r = q.sqrt();
            let decay = (-h * s).exp();
            (decay * (r * s).sin() / r, decay * (r * s).cos())
        } else {
            // overdamped: combine exponents so nothing overflows
            let r = (-q).sqrt();
            let slow = -(h * h - r * r) / (h + r); // r - h without cancellation
            let a = (slow * s).exp();
            let b = (-(r + h) * s).exp();
            ((a - b) / (2.0 * r), 0.5 * (a + b))
        }
    }
}

/// Precomputed propagator and noise factor for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStep {
    /// Mean propagator, row-major `[[xx, xv], [vx, vv]]`.
    pub propagator: [[f64; 2]; 2],
    /// Lower Cholesky factor `(l11, l21, l22)` of the step covariance.
    pub noise: (f64, f64, f64),
}

impl ExactStep {
    /// `kt_over_m` is `k_B T / m` (m²/s²).
    pub fn new(omega: f64, gamma: f64, kt_over_m: f64, dt: f64) -> Self {
        let propagator = propagator(omega, gamma, dt);
        let cov = covariance(omega, gamma, kt_over_m, dt);
        let l11 = cov[0][0].max(0.0).sqrt();
        let l21 = if l11 > 0.0 { cov[0][1] / l11 } else { 0.0 };
        let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
        Self {
            propagator,
            noise: (l11, l21, l22),
        }
    }

    #[inline]
    pub fn advance(&self, x: f64, v: f64, z1: f64, z2: f64) -> (f64, f64) {
        let m = &self.propagator;
        let (l11, l21, l22) = self.noise;
        (
            m[0][0] * x + m[0][1] * v + l11 * z1,
            m[1][0] * x + m[1][1] * v + l21 * z1 + l22 * z2,
        )
    }
}

pub fn propagator(omega: f64, gamma: f64, dt: f64) -> [[f64; 2]; 2] {
    let basis = Basis {
        q: omega * omega - 0.25 * gamma * gamma,
        half_gamma: 0.5 * gamma,
    };
    let (es, ec) = basis.eval(dt);
    let h = 0.5 * gamma;
    [[ec + h * es, es], [-omega * omega * es, ec - h * es]]
}

/// Exact covariance of the state increment over `dt` started from a fixed state.
pub fn covariance(omega: f64, gamma: f64, kt_over_m: f64, dt: f64) -> [[f64; 2]; 2] {
    if kt_over_m == 0.0 || gamma == 0.0 {
        return [[0.0; 2]; 2];
    }
    let oscillations = dt * ((omega * omega - 0.25 * gamma * gamma).abs().sqrt() + 0.5 * gamma);
    if gamma * dt > 1.0 || oscillations > 4000.0 {
        stationary_route(omega, gamma, kt_over_m, dt)
    } else {
        quadrature_route(omega, gamma, kt_over_m, dt)
    }
}

pub(crate) fn quadrature_route(omega: f64, gamma: f64, kt_over_m: f64, dt: f64) -> [[f64; 2]; 2] {
    let h = 0.5 * gamma;
    let basis = Basis {
        q: omega * omega - h * h,
        half_gamma: h,
    };
    let sigma2 = 2.0 * gamma * kt_over_m;
    let oscillations = dt * (basis.q.abs().sqrt() + h);
    let panels = (4.0 * oscillations).ceil().max(1.0) as usize;
    let width = dt / panels as f64;
    let (mut ixx, mut ivv) = (0.0, 0.0);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for s in [mid - half * node, mid + half * node] {
                let (es, ec) = basis.eval(s);
                let gp = ec - h * es;
                ixx += weight * half * es * es;
                ivv += weight * half * gp * gp;
            }
        }
    }
    let (es_end, _) = basis.eval(dt);
    let ixv = 0.5 * es_end * es_end;
    [[sigma2 * ixx, sigma2 * ixv], [sigma2 * ixv, sigma2 * ivv]]
}

pub(crate) fn stationary_route(omega: f64, gamma: f64, kt_over_m: f64, dt: f64) -> [[f64; 2]; 2] {
    let m = propagator(omega, gamma, dt);
    let sxx = kt_over_m / (omega * omega);
    let svv = kt_over_m;
    // Σ∞ - M Σ∞ Mᵀ with Σ∞ = diag(sxx, svv)
    let c00 = sxx - (m[0][0] * m[0][0] * sxx + m[0][1] * m[0][1] * svv);
    let c01 = -(m[0][0] * m[1][0] * sxx + m[0][1] * m[1][1] * svv);
    let c11 = svv - (m[1][0] * m[1][0] * sxx + m[1][1] * m[1][1] * svv);
    [[c00, c01], [c01, c11]]
}
