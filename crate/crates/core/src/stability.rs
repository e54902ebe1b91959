//! Linear stability of the homogeneous stationary solution.
//!
//! A perturbation `cos(k theta)` of the firm and worker shares evolves, to
//! first order, by a 2x2 matrix that depends on the frequency only through the
//! kernel factor `Z_k`. Mode `k` is unstable exactly when `Z_k < Z*`, and
//! since `Z_k` increases with `alpha rho` every mode has a critical transport
//! cost `tau*_k` at which it stabilizes.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{homogeneous_solution, no_black_hole, ModelParams};

/// A nonzero Fourier frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct Mode(i64);

impl Mode {
    pub fn new(k: i64) -> Result<Self> {
        if k == 0 {
            return Err(Error::ZeroMode);
        }
        Ok(Self(k))
    }

    pub fn get(self) -> i64 {
        self.0
    }

    pub fn is_even(self) -> bool {
        self.0 % 2 == 0
    }

    fn abs_f64(self) -> f64 {
        self.0.unsigned_abs() as f64
    }
}

impl TryFrom<i64> for Mode {
    type Error = Error;
    fn try_from(k: i64) -> Result<Self> {
        Mode::new(k)
    }
}

impl From<Mode> for i64 {
    fn from(mode: Mode) -> i64 {
        mode.0
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `Z_k` as a function of `X = alpha rho`.
///
/// Even k: `X^2 / (k^2 + X^2)`. Odd k: the same times
/// `(1 + e^{-pi X}) / (1 - e^{-pi X}) = coth(pi X / 2)`, which is evaluated
/// through `tanh` so small `X` never forms `0/0`.
pub fn zk_of_x(mode: Mode, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let ratio = mode.abs_f64() / x;
    let even_part = 1.0 / (1.0 + ratio * ratio);
    if mode.is_even() {
        even_part
    } else {
        even_part / (0.5 * PI * x).tanh()
    }
}

pub fn compute_zk(mode: Mode, alpha: f64, rho: f64) -> f64 {
    zk_of_x(mode, alpha * rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

pub fn compute_ab_delta(z: f64, mu: f64, sigma: f64) -> Coefficients {
    let delta = 1.0 - mu / sigma * z - (sigma - 1.0) / sigma * z * z;
    let a = (1.0 + mu / (sigma - 1.0) * z - (1.0 + mu * mu / (sigma - 1.0)) * z * z) / delta;
    let b = -(mu * z - 1.0).powi(2) / delta;
    Coefficients { a, b, delta }
}

/// `A + B` from its factored numerator; exactly zero at `Z = Z*`.
fn a_plus_b(z: f64, mu: f64, sigma: f64, delta: f64) -> f64 {
    let s1 = sigma - 1.0;
    z * (mu * (2.0 * sigma - 1.0) / s1 - (1.0 + mu * mu * sigma / s1) * z) / delta
}

/// Threshold of `Z_k` below which mode k grows.
pub fn z_star(mu: f64, sigma: f64) -> f64 {
    mu * (2.0 * sigma - 1.0) / (sigma * (1.0 + mu * mu) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub k: i64,
    pub tau: f64,
    pub z_k: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    /// Includes the `G^-mu / sigma` prefactor.
    pub growth_matrix: [[f64; 2]; 2],
    pub eigenvalues: [Complex64; 2],
    pub max_real_part: f64,
}

impl ModeSpectrum {
    /// Eigenvector `(n, m)` of the eigenvalue with the larger real part, scaled
    /// to unit max-norm; `None` when the eigenvalues are complex.
    pub fn dominant_direction(&self) -> Option<[f64; 2]> {
        let lambda = self.eigenvalues[0];
        if lambda.im != 0.0 {
            return None;
        }
        let [[a, b], [c, d]] = self.growth_matrix;
        let from_first = [b, lambda.re - a];
        let from_second = [lambda.re - d, c];
        let norm = |v: [f64; 2]| v[0].abs().max(v[1].abs());
        let v = if norm(from_first) >= norm(from_second) { from_first } else { from_second };
        let scale = norm(v);
        if scale == 0.0 {
            return None;
        }
        let sign = if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) { -1.0 } else { 1.0 };
        Some([sign * v[0] / scale, sign * v[1] / scale])
    }
}

/// Linearized growth matrix and its eigenvalues at kernel factor `z`.
pub fn growth_matrix_at_z(z: f64, params: &ModelParams) -> ModeSpectrum {
    let ModelParams { mu, sigma, v_n, v_m, .. } = *params;
    let Coefficients { a, b, delta } = compute_ab_delta(z, mu, sigma);
    let scale = homogeneous_solution(params).g.powf(-mu) / sigma;
    let unscaled = [
        [v_n * mu * (a / sigma - 1.0), v_n * mu * (b / sigma + 1.0)],
        [v_m * a, v_m * b],
    ];
    let trace = unscaled[0][0] + unscaled[1][1];
    let det = -v_n * v_m * mu * a_plus_b(z, mu, sigma, delta);
    let [l1, l2] = quadratic_roots(trace, det);
    let eigenvalues = [l1 * scale, l2 * scale];
    ModeSpectrum {
        k: 0,
        tau: params.tau,
        z_k: z,
        delta,
        a,
        b,
        growth_matrix: [
            [scale * unscaled[0][0], scale * unscaled[0][1]],
            [scale * unscaled[1][0], scale * unscaled[1][1]],
        ],
        eigenvalues,
        max_real_part: eigenvalues[0].re.max(eigenvalues[1].re),
    }
}

pub fn growth_matrix(mode: Mode, params: &ModelParams) -> ModeSpectrum {
    let z = compute_zk(mode, params.alpha(), params.rho);
    ModeSpectrum {
        k: mode.get(),
        ..growth_matrix_at_z(z, params)
    }
}

/// Roots of `lambda^2 - trace lambda + det = 0`, larger real part first.
fn quadratic_roots(trace: f64, det: f64) -> [Complex64; 2] {
    let disc = trace * trace - 4.0 * det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        let big = 0.5 * (trace + trace.signum() * root);
        let (r1, r2) = if big == 0.0 { (0.0, 0.0) } else { (big, det / big) };
        let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
        [Complex64::new(hi, 0.0), Complex64::new(lo, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(0.5 * trace, im), Complex64::new(0.5 * trace, -im)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalMethod {
    ClosedForm,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub k: i64,
    pub tau_star: f64,
    pub z_star: f64,
    /// `alpha rho` at the critical point.
    pub x_star: f64,
    pub method: CriticalMethod,
}

/// Transport cost at which `Z_k = Z*`: closed form for even k, bisection for odd k.
pub fn critical_tau(mode: Mode, mu: f64, sigma: f64, rho: f64) -> Result<CriticalPoint> {
    let target = checked_z_star(mu, sigma, rho)?;
    if mode.is_even() {
        let x = mode.abs_f64() * (target / (1.0 - target)).sqrt();
        Ok(CriticalPoint {
            k: mode.get(),
            tau_star: x / (rho * (sigma - 1.0)),
            z_star: target,
            x_star: x,
            method: CriticalMethod::ClosedForm,
        })
    } else {
        critical_tau_bisection(mode, mu, sigma, rho)
    }
}

/// Bisection on `X = alpha rho` for either parity; `Z_k` is increasing in `X`.
pub fn critical_tau_bisection(mode: Mode, mu: f64, sigma: f64, rho: f64) -> Result<CriticalPoint> {
    let target = checked_z_star(mu, sigma, rho)?;
    let mut lo = 0.0;
    let mut hi = 1.0;
    while zk_of_x(mode, hi) <= target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if zk_of_x(mode, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(CriticalPoint {
        k: mode.get(),
        tau_star: x / (rho * (sigma - 1.0)),
        z_star: target,
        x_star: x,
        method: CriticalMethod::Bisection,
    })
}

fn checked_z_star(mu: f64, sigma: f64, rho: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&mu) || !(sigma > 1.0) || !(rho > 0.0) {
        return Err(Error::invalid("params", format!("mu = {mu}, sigma = {sigma}, rho = {rho}")));
    }
    if !no_black_hole(mu, sigma) {
        return Err(Error::NoBlackHoleViolated { mu, sigma });
    }
    Ok(z_star(mu, sigma))
}

/// Spectra for every `(k, tau)` pair, modes outermost.
pub fn spectrum_scan(modes: &[Mode], taus: &[f64], params: &ModelParams) -> Result<Vec<ModeSpectrum>> {
    params.validate()?;
    if let Some(&tau) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::invalid("tau_grid", format!("entries must be positive, got {tau}")));
    }
    Ok(modes
        .iter()
        .flat_map(|&mode| taus.iter().map(move |&tau| growth_matrix(mode, &params.with_tau(tau))))
        .collect())
}

/// Indices `i` such that `values[i]` and `values[i + 1]` have strictly opposite signs
/// (a zero entry counts as a crossing with the following nonzero value).
pub fn sign_changes(values: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        if let Some((j, prev)) = last {
            if prev.signum() != v.signum() {
                out.push(j);
            }
        }
        last = Some((i, v));
    }
    out
}
