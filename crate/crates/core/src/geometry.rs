//! Spatial discretizations: a ring of equispaced nodes on a circle of radius
//! `rho` (the racetrack economy) or a finite set of regions with an explicit
//! iceberg transport-cost matrix.
//!
//! Both carry the transport kernel `K[i][j] = T(x_i, x_j)^(1 - sigma)` and a
//! matrix of kernel quadrature weights `Q` such that
//! `sum_j Q[i][j] f_j` approximates `integral f(y) K(x_i, y) dy`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    DiscreteRegions,
    RacetrackGrid,
}

/// How kernel integrals over the racetrack are discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelQuadrature {
    /// Point samples of the kernel times the cell width: `Q = K * dx`.
    Trapezoid,
    /// Piecewise-linear interpolation of the integrand against the exact
    /// exponential kernel. Integrates the kernel itself without error, so the
    /// grid homogeneous state coincides with the analytic one.
    #[default]
    Exact,
}

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                data.push(f(i, j));
            }
        }
        Self { dim, data }
    }

    /// Circulant matrix with `M[i][j] = row[(j - i) mod dim]`.
    pub fn circulant(row: &[f64]) -> Self {
        let dim = row.len();
        Self::from_fn(dim, |i, j| row[(j + dim - i) % dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `out = M x`, summed left to right in each row.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // eight independent lanes combined in a fixed order
    let mut acc = [0.0f64; 8];
    let mut xs = a.chunks_exact(8);
    let mut ys = b.chunks_exact(8);
    for (x, y) in (&mut xs).zip(&mut ys) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = xs.remainder().iter().zip(ys.remainder()).map(|(x, y)| x * y).sum();
    (((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))) + tail
}

/// Shorter arc length between two points of the circle of radius `rho`.
/// Angles outside `[-pi, pi)` are wrapped.
pub fn circle_distance(theta: f64, theta_prime: f64, rho: f64) -> f64 {
    let gap = (theta - theta_prime).abs().rem_euclid(2.0 * PI);
    rho * gap.min(2.0 * PI - gap)
}

#[derive(Debug, Clone)]
pub struct SpaceDiscretization {
    kind: SpaceKind,
    region_count: usize,
    radius: Option<f64>,
    angles: Vec<f64>,
    cell_weight: f64,
    sigma: f64,
    tau: Option<f64>,
    quadrature: Option<KernelQuadrature>,
    transport_matrix: SquareMatrix,
    kernel_weights: SquareMatrix,
}

/// Racetrack grid with the default kernel quadrature.
pub fn build_racetrack(
    grid_points: usize,
    rho: f64,
    sigma: f64,
    tau: f64,
) -> Result<SpaceDiscretization> {
    SpaceDiscretization::racetrack(grid_points, rho, sigma, tau, KernelQuadrature::default())
}

impl SpaceDiscretization {
    /// `grid_points` equispaced nodes at `theta_i = -pi + i * 2pi/I`, i = 0..I-1,
    /// with kernel `exp(-(sigma - 1) tau d(x_i, x_j))`.
    pub fn racetrack(
        grid_points: usize,
        rho: f64,
        sigma: f64,
        tau: f64,
        quadrature: KernelQuadrature,
    ) -> Result<Self> {
        if grid_points < 4 || !grid_points.is_multiple_of(2) {
            return Err(Error::invalid(
                "grid_points",
                format!("need an even number of nodes >= 4, got {grid_points}"),
            ));
        }
        check_positive("rho", rho)?;
        check_sigma(sigma)?;
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::invalid("tau", format!("must be finite and >= 0, got {tau}")));
        }

        let alpha = (sigma - 1.0) * tau;
        let d_theta = 2.0 * PI / grid_points as f64;
        let h = rho * d_theta;
        let angles: Vec<f64> = (0..grid_points)
            .map(|i| -PI + i as f64 * d_theta)
            .collect();

        // Offsets r and I - r are the same distance apart; the antipode r = I/2
        // sits exactly at pi * rho.
        let offset_distance = |r: usize| h * r.min(grid_points - r) as f64;
        let kernel_row: Vec<f64> = (0..grid_points)
            .map(|r| (-alpha * offset_distance(r)).exp())
            .collect();

        let weight_row = match quadrature {
            KernelQuadrature::Trapezoid => kernel_row.iter().map(|k| k * h).collect(),
            KernelQuadrature::Exact => exact_kernel_weights(grid_points, h, alpha),
        };

        Ok(Self {
            kind: SpaceKind::RacetrackGrid,
            region_count: grid_points,
            radius: Some(rho),
            angles,
            cell_weight: h,
            sigma,
            tau: Some(tau),
            quadrature: Some(quadrature),
            transport_matrix: SquareMatrix::circulant(&kernel_row),
            kernel_weights: SquareMatrix::circulant(&weight_row),
        })
    }

    /// `R` discrete regions with iceberg costs `T[r][s] >= 1`, symmetric, and
    /// `T[r][r] = 1`.
    pub fn discrete_regions(transport_costs: &[Vec<f64>], sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let regions = transport_costs.len();
        if regions == 0 {
            return Err(Error::invalid("transport_costs", "need at least one region"));
        }
        for (r, row) in transport_costs.iter().enumerate() {
            if row.len() != regions {
                return Err(Error::LengthMismatch {
                    expected: regions,
                    found: row.len(),
                });
            }
            for (s, &t) in row.iter().enumerate() {
                if !(t >= 1.0 && t.is_finite()) {
                    return Err(Error::invalid(
                        "transport_costs",
                        format!("T[{r}][{s}] = {t} must be finite and >= 1"),
                    ));
                }
                if t != transport_costs[s][r] {
                    return Err(Error::invalid(
                        "transport_costs",
                        format!("matrix is not symmetric at ({r}, {s})"),
                    ));
                }
            }
            if row[r] != 1.0 {
                return Err(Error::invalid(
                    "transport_costs",
                    format!("own-region cost T[{r}][{r}] must be 1, got {}", row[r]),
                ));
            }
        }
        let kernel = SquareMatrix::from_fn(regions, |r, s| {
            transport_costs[r][s].powf(1.0 - sigma)
        });
        Ok(Self {
            kind: SpaceKind::DiscreteRegions,
            region_count: regions,
            radius: None,
            angles: Vec::new(),
            cell_weight: 1.0,
            sigma,
            tau: None,
            quadrature: None,
            transport_matrix: kernel.clone(),
            kernel_weights: kernel,
        })
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn radius(&self) -> Option<f64> {
        self.radius
    }

    /// Node angles; empty for discrete regions.
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tau(&self) -> Option<f64> {
        self.tau
    }

    pub fn quadrature(&self) -> Option<KernelQuadrature> {
        self.quadrature
    }

    pub fn transport_matrix(&self) -> &SquareMatrix {
        &self.transport_matrix
    }

    pub fn kernel_weights(&self) -> &SquareMatrix {
        &self.kernel_weights
    }

    /// Total measure of the space: `2 pi rho` on the racetrack, `R` otherwise.
    pub fn total_measure(&self) -> f64 {
        self.cell_weight * self.region_count as f64
    }

    /// Density of a uniformly spread unit mass.
    pub fn uniform_density(&self) -> f64 {
        1.0 / self.total_measure()
    }

    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f.len())?;
        Ok(self.integrate_unchecked(f))
    }

    #[inline]
    pub(crate) fn integrate_unchecked(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_weight
    }

    /// Quadrature of `f(y) * K(x_i, y)` for every node `x_i`.
    pub fn kernel_integral(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f.len())?;
        Ok(self.kernel_weights.apply(f))
    }

    pub(crate) fn check_len(&self, found: usize) -> Result<()> {
        if found != self.region_count {
            return Err(Error::LengthMismatch {
                expected: self.region_count,
                found,
            });
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::invalid(name, format!("must be finite and > 0, got {value}")));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 1.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "sigma",
            format!("elasticity of substitution must exceed 1, got {sigma}"),
        ));
    }
    Ok(())
}

/// First row of the circulant weight matrix for hat-function interpolation of
/// the integrand against `exp(-alpha d)`. Each cell spans distances
/// `[d_near, d_near + h]`; the kink points of `d` (own node and antipode) are
/// grid nodes because the node count is even.
fn exact_kernel_weights(grid_points: usize, h: f64, alpha: f64) -> Vec<f64> {
    let x = alpha * h;
    let (p_near, p_far) = hat_moments(x);
    let mut row = vec![0.0; grid_points];
    let half = grid_points / 2;
    for cell in 0..grid_points {
        let next = (cell + 1) % grid_points;
        let (near, far) = if cell < half { (cell, next) } else { (next, cell) };
        let d_near = h * near.min(grid_points - near) as f64;
        let scale = h * (-alpha * d_near).exp();
        row[near] += scale * p_near;
        row[far] += scale * p_far;
    }
    row
}

/// `(int_0^1 (1-u) e^{-xu} du, int_0^1 u e^{-xu} du)` for `x >= 0`.
fn hat_moments(x: f64) -> (f64, f64) {
    if x < 0.05 {
        // sum_n (-x)^n / (n+2)!  and  sum_n (-x)^n (n+1) / (n+2)!
        let mut near = 0.0;
        let mut far = 0.0;
        let mut power = 1.0;
        let mut factorial = 2.0;
        for n in 0..10 {
            near += power / factorial;
            far += power * (n as f64 + 1.0) / factorial;
            power *= -x;
            factorial *= n as f64 + 3.0;
        }
        (near, far)
    } else {
        let e = (-x).exp();
        ((x - 1.0 + e) / (x * x), (1.0 - e * (1.0 + x)) / (x * x))
    }
}
