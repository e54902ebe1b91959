//! Instantaneous market equilibrium for given firm and worker shares.
//!
//! With `W = w^sigma`, income and the price index can be eliminated and the
//! nominal wage solves the fixed-point problem
//!
//! ```text
//! W_i = (n_i / m_i) sum_j Q_ij [(1-mu) phi_j + mu W_j^(1/sigma) m_j] / D_j,
//! D_j = sum_k Q_jk n_k W_k^((1-sigma)/sigma),
//! ```
//!
//! where `Q` holds the kernel quadrature weights of the space. The price index
//! follows from `G_j^(1-sigma) = sigma D_j`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SpaceDiscretization, SpaceKind};
use crate::model::{ModelParams, PopulationState};

/// Shares below `SHARE_FLOOR_FACTOR * uniform_density` are floored inside
/// `n/m` ratios and the price-index sum.
pub const SHARE_FLOOR_FACTOR: f64 = 1e-12;

pub const MAX_ANDERSON_DEPTH: usize = 20;

pub fn share_floor(space: &SpaceDiscretization) -> f64 {
    SHARE_FLOOR_FACTOR * space.uniform_density()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumOptions {
    /// Stop once `max_i |F(W)_i - W_i| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// `W <- (1 - damping) W + damping F(W)`; 1 is plain substitution.
    pub damping: f64,
    /// Number of previous iterates used for Anderson mixing of `ln W`;
    /// 0 gives plain (damped) successive substitution.
    pub anderson_depth: usize,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 10_000, damping: 1.0, anderson_depth: 5 }
    }
}

impl EquilibriumOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("equilibrium.tol", format!("must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("equilibrium.max_iter", "must be >= 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(
                "equilibrium.damping",
                format!("must lie in (0, 1], got {}", self.damping),
            ));
        }
        if self.anderson_depth > MAX_ANDERSON_DEPTH {
            return Err(Error::invalid(
                "equilibrium.anderson_depth",
                format!("must be <= {MAX_ANDERSON_DEPTH}, got {}", self.anderson_depth),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    /// Total income.
    pub y: Vec<f64>,
    /// Nominal wage.
    pub w: Vec<f64>,
    /// Manufacturing price index.
    pub g: Vec<f64>,
    /// Real wage `w G^-mu`.
    pub omega: Vec<f64>,
    /// Real profit `(mu/sigma)(m/n) omega`.
    pub eta: Vec<f64>,
    /// `w^sigma`, the fixed point itself; used to warm-start the next solve.
    pub wage_power: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Indices where `n` or `m` fell below the share floor.
    pub floored: Vec<usize>,
}

/// Compact per-solve diagnostics kept in trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSummary {
    pub iterations: usize,
    pub residual: f64,
    pub floored_points: usize,
    pub max_w: f64,
    pub max_eta: f64,
    pub max_omega: f64,
}

impl Equilibrium {
    pub fn summary(&self) -> EquilibriumSummary {
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        EquilibriumSummary {
            iterations: self.iterations,
            residual: self.residual,
            floored_points: self.floored.len(),
            max_w: max(&self.w),
            max_eta: max(&self.eta),
            max_omega: max(&self.omega),
        }
    }
}

/// Floored shares and the buffers reused by every map evaluation.
struct WageMap<'a> {
    params: &'a ModelParams,
    space: &'a SpaceDiscretization,
    phi: &'a [f64],
    m: &'a [f64],
    n_floored: Vec<f64>,
    /// `n_i / m_i` with both floored.
    share_ratio: Vec<f64>,
    floored: Vec<usize>,
    wage: Vec<f64>,
    firm_weight: Vec<f64>,
    demand: Vec<f64>,
    quotient: Vec<f64>,
    market: Vec<f64>,
}

impl<'a> WageMap<'a> {
    fn new(
        state: &'a PopulationState,
        params: &'a ModelParams,
        space: &'a SpaceDiscretization,
    ) -> Result<Self> {
        check_compatible(params, space)?;
        for v in [&state.n, &state.m, &state.phi] {
            space.check_len(v.len())?;
        }
        for v in [&state.n, &state.m, &state.phi] {
            if let Some((index, &value)) =
                v.iter().enumerate().find(|(_, x)| !(**x >= 0.0 && x.is_finite()))
            {
                return Err(Error::DegenerateShare { index, value });
            }
        }
        let floor = share_floor(space);
        let mut floored = Vec::new();
        let mut n_floored = Vec::with_capacity(state.len());
        let mut share_ratio = Vec::with_capacity(state.len());
        for (i, (&n, &m)) in state.n.iter().zip(&state.m).enumerate() {
            if n < floor || m < floor {
                floored.push(i);
            }
            let n = n.max(floor);
            n_floored.push(n);
            share_ratio.push(n / m.max(floor));
        }
        let len = state.len();
        Ok(Self {
            params,
            space,
            phi: &state.phi,
            m: &state.m,
            n_floored,
            share_ratio,
            floored,
            wage: vec![0.0; len],
            firm_weight: vec![0.0; len],
            demand: vec![0.0; len],
            quotient: vec![0.0; len],
            market: vec![0.0; len],
        })
    }

    /// Writes `F(W)` into `out`; leaves `w = W^(1/sigma)` and the price-index
    /// sums `D` for this `W` in the buffers.
    fn eval(&mut self, wage_power: &[f64], out: &mut [f64]) -> Result<()> {
        let sigma = self.params.sigma;
        let mu = self.params.mu;
        let inv_sigma = 1.0 / sigma;
        for (i, &big_w) in wage_power.iter().enumerate() {
            if !(big_w > 0.0 && big_w.is_finite()) {
                return Err(Error::NonPositiveInput { index: i, value: big_w });
            }
            let w = big_w.powf(inv_sigma);
            self.wage[i] = w;
            // W^((1-sigma)/sigma) = w / W
            self.firm_weight[i] = self.n_floored[i] * (w / big_w);
        }
        let weights = self.space.kernel_weights();
        weights.apply_into(&self.firm_weight, &mut self.demand);
        for j in 0..self.quotient.len() {
            let spending = (1.0 - mu) * self.phi[j] + mu * self.wage[j] * self.m[j];
            self.quotient[j] = spending / self.demand[j];
        }
        weights.apply_into(&self.quotient, &mut self.market);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.share_ratio[i] * self.market[i];
        }
        Ok(())
    }

    /// Market fields from the buffers of the last `eval`.
    fn fields(self, wage_power: Vec<f64>, iterations: usize, residual: f64) -> Equilibrium {
        let ModelParams { mu, sigma, .. } = *self.params;
        let len = wage_power.len();
        let mut y = Vec::with_capacity(len);
        let mut g = Vec::with_capacity(len);
        let mut omega = Vec::with_capacity(len);
        let mut eta = Vec::with_capacity(len);
        for i in 0..len {
            let w = self.wage[i];
            let gi = (sigma * self.demand[i]).powf(1.0 / (1.0 - sigma));
            let om = w * gi.powf(-mu);
            y.push((1.0 - mu) * sigma * self.phi[i] + mu * sigma * w * self.m[i]);
            g.push(gi);
            omega.push(om);
            eta.push(mu / sigma / self.share_ratio[i] * om);
        }
        Equilibrium {
            y,
            w: self.wage,
            g,
            omega,
            eta,
            wage_power,
            iterations,
            residual,
            floored: self.floored,
        }
    }
}

/// One application of the wage fixed-point map `F`.
pub fn wage_fixed_point_map(
    wage_power: &[f64],
    state: &PopulationState,
    params: &ModelParams,
    space: &SpaceDiscretization,
) -> Result<Vec<f64>> {
    space.check_len(wage_power.len())?;
    let mut map = WageMap::new(state, params, space)?;
    let mut out = vec![0.0; wage_power.len()];
    map.eval(wage_power, &mut out)?;
    Ok(out)
}

/// Fixed-point iteration on `F` from `wage_power_init` (all ones when `None`).
///
/// The stopping rule is always `max_i |F(W)_i - W_i| < tol`, evaluated at the
/// returned `W`.
pub fn solve_equilibrium(
    state: &PopulationState,
    params: &ModelParams,
    space: &SpaceDiscretization,
    options: &EquilibriumOptions,
    wage_power_init: Option<&[f64]>,
) -> Result<Equilibrium> {
    options.validate()?;
    let mut map = WageMap::new(state, params, space)?;
    let len = state.len();
    let mut current = match wage_power_init {
        Some(init) => {
            space.check_len(init.len())?;
            init.to_vec()
        }
        None => vec![1.0; len],
    };
    let mut next = vec![0.0; len];
    let mut history = Vec::new();
    let lambda = options.damping;
    let mut mixer = Anderson::new(options.anderson_depth, len);
    for iteration in 1..=options.max_iter {
        map.eval(&current, &mut next)?;
        let residual = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !residual.is_finite() {
            history.push(residual);
            break;
        }
        if residual < options.tol {
            return Ok(map.fields(current, iteration, residual));
        }
        history.push(residual);
        if options.anderson_depth > 0 {
            mixer.advance(&mut current, &next, lambda);
        } else if lambda == 1.0 {
            std::mem::swap(&mut current, &mut next);
        } else {
            for (c, f) in current.iter_mut().zip(&next) {
                *c = (1.0 - lambda) * *c + lambda * f;
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: history.len(),
        last_residual: history.last().copied().unwrap_or(f64::NAN),
        residual_history: history,
    })
}

/// Anderson mixing in `u = ln W`, which keeps every iterate positive.
struct Anderson {
    depth: usize,
    u: Vec<f64>,
    r: Vec<f64>,
    prev_u: Vec<f64>,
    prev_r: Vec<f64>,
    has_prev: bool,
    /// Columns `u_{k+1} - u_k` and `r_{k+1} - r_k`, oldest first.
    du: Vec<Vec<f64>>,
    dr: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize, len: usize) -> Self {
        Self {
            depth,
            u: vec![0.0; len],
            r: vec![0.0; len],
            prev_u: vec![0.0; len],
            prev_r: vec![0.0; len],
            has_prev: false,
            du: Vec::new(),
            dr: Vec::new(),
        }
    }

    fn reset(&mut self) {
        self.has_prev = false;
        self.du.clear();
        self.dr.clear();
    }

    /// Replaces `current` (the iterate `W`) by the mixed next iterate given `F(W)`.
    fn advance(&mut self, current: &mut [f64], image: &[f64], beta: f64) {
        for i in 0..current.len() {
            self.u[i] = current[i].ln();
            self.r[i] = image[i].ln() - self.u[i];
        }
        if self.has_prev {
            if self.du.len() == self.depth {
                self.du.remove(0);
                self.dr.remove(0);
            }
            self.du.push(self.u.iter().zip(&self.prev_u).map(|(a, b)| a - b).collect());
            self.dr.push(self.r.iter().zip(&self.prev_r).map(|(a, b)| a - b).collect());
        }
        self.prev_u.copy_from_slice(&self.u);
        self.prev_r.copy_from_slice(&self.r);
        self.has_prev = true;

        let gamma = least_squares(&self.dr, &self.r);
        let mut ok = true;
        for i in 0..current.len() {
            let mut u = self.u[i] + beta * self.r[i];
            for (c, g) in gamma.iter().enumerate() {
                u -= g * (self.du[c][i] + beta * self.dr[c][i]);
            }
            let w = u.exp();
            ok &= w.is_finite() && w > 0.0;
            current[i] = w;
        }
        if !ok {
            for i in 0..current.len() {
                current[i] = (self.u[i] + beta * self.r[i]).exp();
            }
            self.reset();
        }
    }
}

/// Least-squares coefficients `argmin |rhs - sum_c gamma_c cols_c|` by modified
/// Gram-Schmidt; nearly dependent columns get a zero coefficient.
fn least_squares(cols: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let k = cols.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r = vec![vec![0.0; k]; k];
    let mut keep = vec![false; k];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for c in 0..k {
        let mut v = cols[c].clone();
        let original = dot(&v, &v).sqrt();
        for (j, qj) in q.iter().enumerate() {
            if !keep[j] {
                continue;
            }
            let proj = dot(qj, &v);
            r[j][c] = proj;
            v.iter_mut().zip(qj).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-10 * original && norm > 0.0 {
            keep[c] = true;
            r[c][c] = norm;
            v.iter_mut().for_each(|x| *x /= norm);
        }
        q.push(v);
    }
    let mut gamma = vec![0.0; k];
    for c in (0..k).rev() {
        if !keep[c] {
            continue;
        }
        let mut acc = dot(&q[c], rhs);
        for j in c + 1..k {
            if keep[j] {
                acc -= r[c][j] * gamma[j];
            }
        }
        gamma[c] = acc / r[c][c];
    }
    gamma
}

/// The space must have been built for the same `sigma` (and `tau`, `rho` on
/// the racetrack) as the parameters.
pub fn check_compatible(params: &ModelParams, space: &SpaceDiscretization) -> Result<()> {
    params.validate()?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    if !close(params.sigma, space.sigma()) {
        return Err(Error::invalid(
            "sigma",
            format!("space kernel built for sigma = {}, params say {}", space.sigma(), params.sigma),
        ));
    }
    if space.kind() == SpaceKind::RacetrackGrid {
        let tau = space.tau().unwrap_or(f64::NAN);
        let rho = space.radius().unwrap_or(f64::NAN);
        if !close(params.tau, tau) || !close(params.rho, rho) {
            return Err(Error::invalid(
                "tau/rho",
                format!("space built for tau = {tau}, rho = {rho}; params say tau = {}, rho = {}", params.tau, params.rho),
            ));
        }
    }
    Ok(())
}
