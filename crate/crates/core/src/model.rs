use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SpaceDiscretization, SpaceKind};

/// Name of the generator behind [`make_perturbed_state`], recorded in run metadata.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Expenditure share of manufactured goods.
    pub mu: f64,
    /// Elasticity of substitution between varieties.
    pub sigma: f64,
    /// Transport-cost rate per unit distance.
    pub tau: f64,
    /// Radius of the circle.
    pub rho: f64,
    /// Firm migration speed.
    pub v_n: f64,
    /// Worker migration speed.
    pub v_m: f64,
}

impl Default for ModelParams {
    /// `mu = 0.6, sigma = 5, tau = 1.1, rho = 1, v_n = v_m = 1`.
    fn default() -> Self {
        Self { mu: 0.6, sigma: 5.0, tau: 1.1, rho: 1.0, v_n: 1.0, v_m: 1.0 }
    }
}

impl ModelParams {
    pub fn new(mu: f64, sigma: f64, tau: f64, rho: f64, v_n: f64, v_m: f64) -> Result<Self> {
        let params = Self { mu, sigma, tau, rho, v_n, v_m };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mu, self.sigma, self.tau, self.rho, self.v_n, self.v_m]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("params", "all parameters must be finite"));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::invalid("mu", format!("must lie in [0, 1), got {}", self.mu)));
        }
        if self.sigma <= 1.0 {
            return Err(Error::invalid("sigma", format!("must exceed 1, got {}", self.sigma)));
        }
        if self.tau < 0.0 {
            return Err(Error::invalid("tau", format!("must be >= 0, got {}", self.tau)));
        }
        if self.rho <= 0.0 {
            return Err(Error::invalid("rho", format!("must be > 0, got {}", self.rho)));
        }
        if self.v_n <= 0.0 || self.v_m <= 0.0 {
            return Err(Error::invalid("v_n/v_m", "migration speeds must be > 0"));
        }
        Ok(())
    }

    /// `alpha = (sigma - 1) tau`, the decay rate of `T^(1 - sigma)` with distance.
    pub fn alpha(&self) -> f64 {
        (self.sigma - 1.0) * self.tau
    }

    /// `1 / (1 - mu) < sigma`.
    pub fn no_black_hole(&self) -> bool {
        no_black_hole(self.mu, self.sigma)
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }
}

pub fn no_black_hole(mu: f64, sigma: f64) -> bool {
    1.0 / (1.0 - mu) < sigma
}

/// Integral of `exp(-alpha d(x, y))` over the circle, with the `alpha -> 0` limit.
pub fn kernel_mass(alpha: f64, rho: f64) -> f64 {
    let x = alpha * PI * rho;
    if x == 0.0 {
        2.0 * PI * rho
    } else {
        -2.0 * (-x).exp_m1() / alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousSolution {
    pub n: f64,
    pub m: f64,
    pub phi: f64,
    pub y: f64,
    pub w: f64,
    pub g: f64,
    pub eta: f64,
    pub omega: f64,
}

/// Spatially uniform stationary state of the racetrack economy.
pub fn homogeneous_solution(params: &ModelParams) -> HomogeneousSolution {
    let density = 1.0 / (2.0 * PI * params.rho);
    let g = (params.sigma * density * kernel_mass(params.alpha(), params.rho))
        .powf(1.0 / (1.0 - params.sigma));
    let omega = g.powf(-params.mu);
    HomogeneousSolution {
        n: density,
        m: density,
        phi: density,
        y: params.sigma * density,
        w: 1.0,
        g,
        eta: params.mu / params.sigma * omega,
        omega,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    /// Firm share density.
    pub n: Vec<f64>,
    /// Manufacturing-worker share density.
    pub m: Vec<f64>,
    /// Agricultural share density; constant in time.
    pub phi: Vec<f64>,
    pub t: f64,
}

impl PopulationState {
    pub fn new(n: Vec<f64>, m: Vec<f64>, phi: Vec<f64>) -> Self {
        Self { n, m, phi, t: 0.0 }
    }

    /// Every population spread uniformly over the space.
    pub fn homogeneous(space: &SpaceDiscretization) -> Self {
        let density = vec![space.uniform_density(); space.region_count()];
        Self::new(density.clone(), density.clone(), density)
    }

    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    /// Nonnegative entries and unit mass for `n`, `m` and `phi` within `mass_tol`.
    pub fn validate(&self, space: &SpaceDiscretization, mass_tol: f64) -> Result<()> {
        for v in [&self.n, &self.m, &self.phi] {
            space.check_len(v.len())?;
        }
        for (name, v) in [("n", &self.n), ("m", &self.m), ("phi", &self.phi)] {
            if let Some((i, &x)) = v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite())) {
                return Err(Error::invalid(name, format!("entry {i} = {x} is negative or not finite")));
            }
            let mass = space.integrate_unchecked(v);
            if (mass - 1.0).abs() > mass_tol {
                return Err(Error::invalid(name, format!("integrates to {mass}, expected 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    /// Relative amplitude bound of each Fourier coefficient.
    pub epsilon: f64,
    pub seed: u64,
    /// Highest perturbed frequency.
    pub mode_cutoff: usize,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self { epsilon: 1e-3, seed: 0, mode_cutoff: 8 }
    }
}

/// Homogeneous state times `1 + delta`, where `delta` is an independent random
/// series `sum_k a_k cos(k theta + phase_k)` for `n` and for `m`, with
/// `a_k ~ U[-eps, eps]` and `phase_k ~ U[0, 2pi)`, k = 1..=mode_cutoff.
/// Each series has zero mean on the grid, so masses stay at one.
pub fn make_perturbed_state(
    space: &SpaceDiscretization,
    spec: &PerturbationSpec,
) -> Result<PopulationState> {
    require_racetrack(space)?;
    if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", format!("must be finite and >= 0, got {}", spec.epsilon)));
    }
    if spec.mode_cutoff == 0 || 2 * spec.mode_cutoff >= space.region_count() {
        return Err(Error::invalid(
            "mode_cutoff",
            format!("must lie in 1..{} for this grid", space.region_count() / 2),
        ));
    }
    let mut state = PopulationState::homogeneous(space);
    if spec.epsilon == 0.0 {
        return Ok(state);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw_series = |rng: &mut ChaCha8Rng| -> Vec<(f64, f64)> {
        (0..spec.mode_cutoff)
            .map(|_| {
                let amp = rng.random_range(-spec.epsilon..=spec.epsilon);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, phase)
            })
            .collect()
    };
    let series_n = draw_series(&mut rng);
    let series_m = draw_series(&mut rng);
    let bar = space.uniform_density();
    for (i, &theta) in space.angles().iter().enumerate() {
        state.n[i] = bar * (1.0 + fourier_sum(&series_n, theta));
        state.m[i] = bar * (1.0 + fourier_sum(&series_m, theta));
    }
    Ok(state)
}

fn fourier_sum(series: &[(f64, f64)], theta: f64) -> f64 {
    series
        .iter()
        .enumerate()
        .map(|(j, &(amp, phase))| amp * ((j + 1) as f64 * theta + phase).cos())
        .sum()
}

/// Homogeneous state with a single cosine mode:
/// `n = bar (1 + amp_n cos(k theta))`, `m = bar (1 + amp_m cos(k theta))`.
pub fn single_mode_state(
    space: &SpaceDiscretization,
    k: usize,
    amp_n: f64,
    amp_m: f64,
) -> Result<PopulationState> {
    require_racetrack(space)?;
    if k == 0 || 2 * k >= space.region_count() {
        return Err(Error::invalid("k", format!("mode {k} not resolvable on this grid")));
    }
    let bar = space.uniform_density();
    let mut state = PopulationState::homogeneous(space);
    for (i, &theta) in space.angles().iter().enumerate() {
        let c = (k as f64 * theta).cos();
        state.n[i] = bar * (1.0 + amp_n * c);
        state.m[i] = bar * (1.0 + amp_m * c);
    }
    Ok(state)
}

fn require_racetrack(space: &SpaceDiscretization) -> Result<()> {
    if space.kind() != SpaceKind::RacetrackGrid {
        return Err(Error::invalid("space", "Fourier perturbations need a racetrack grid"));
    }
    Ok(())
}
