//! Post-processing of states and trajectories: cities, Fourier modes,
//! growth rates and co-agglomeration of firms and workers.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::Snapshot;
use crate::equilibrium::{share_floor, Equilibrium};
use crate::error::{Error, Result};
use crate::geometry::{SpaceDiscretization, SpaceKind};
use crate::model::PopulationState;
use crate::stability::Mode;

pub const DEFAULT_CITY_THRESHOLD: f64 = 2.0;

/// Fewest snapshots a growth-rate fit accepts.
pub const MIN_GROWTH_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct City {
    /// First grid index of the arc; the arc may wrap past the last index.
    pub start: usize,
    pub len: usize,
    /// Index of the largest `n` in the arc.
    pub peak_index: usize,
    /// Firm-weighted circular mean of the arc's angles; `None` on discrete regions.
    pub center_angle: Option<f64>,
    pub peak_n: f64,
    pub peak_m: f64,
    pub mass_n: f64,
    pub mass_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityReport {
    pub city_count: usize,
    pub cities: Vec<City>,
    /// Absolute density threshold `kappa * uniform_density`.
    pub threshold_used: f64,
}

/// Cities of the firm distribution: maximal circularly contiguous runs with
/// `n_i > kappa * uniform_density`. Discrete regions are taken in index order.
pub fn detect_cities(state: &PopulationState, space: &SpaceDiscretization, kappa: f64) -> Result<CityReport> {
    check_kappa(kappa)?;
    space.check_len(state.n.len())?;
    space.check_len(state.m.len())?;
    let threshold = kappa * space.uniform_density();
    let cities = arcs(&state.n, threshold)
        .into_iter()
        .map(|(start, len)| city(state, space, start, len))
        .collect::<Vec<_>>();
    Ok(CityReport { city_count: cities.len(), cities, threshold_used: threshold })
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 1.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa", format!("must be > 1, got {kappa}")));
    }
    Ok(())
}

/// `(start, len)` of maximal circular runs of `values > threshold`, ordered by start.
fn arcs(values: &[f64], threshold: f64) -> Vec<(usize, usize)> {
    let len = values.len();
    let above: Vec<bool> = values.iter().map(|v| *v > threshold).collect();
    if above.iter().all(|a| *a) {
        return vec![(0, len)];
    }
    let mut runs = Vec::new();
    for start in 0..len {
        if above[start] && !above[(start + len - 1) % len] {
            let run = (0..len).take_while(|o| above[(start + o) % len]).count();
            runs.push((start, run));
        }
    }
    runs
}

fn city(state: &PopulationState, space: &SpaceDiscretization, start: usize, len: usize) -> City {
    let count = state.n.len();
    let indices = (0..len).map(|o| (start + o) % count);
    let mut peak_index = start;
    let (mut mass_n, mut mass_m, mut peak_m) = (0.0, 0.0, 0.0f64);
    let (mut sin, mut cos) = (0.0, 0.0);
    for i in indices {
        if state.n[i] > state.n[peak_index] {
            peak_index = i;
        }
        peak_m = peak_m.max(state.m[i]);
        mass_n += state.n[i];
        mass_m += state.m[i];
        if let Some(theta) = space.angles().get(i) {
            sin += state.n[i] * theta.sin();
            cos += state.n[i] * theta.cos();
        }
    }
    let weight = space.cell_weight();
    City {
        start,
        len,
        peak_index,
        center_angle: (space.kind() == SpaceKind::RacetrackGrid).then(|| sin.atan2(cos)),
        peak_n: state.n[peak_index],
        peak_m,
        mass_n: mass_n * weight,
        mass_m: mass_m * weight,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAmplitudes {
    /// `n_hat[k - 1]` for `k = 1..=k_max`.
    pub n_hat: Vec<Complex64>,
    pub m_hat: Vec<Complex64>,
}

impl ModeAmplitudes {
    pub fn k_max(&self) -> usize {
        self.n_hat.len()
    }
}

/// Fourier coefficients `f_hat_k = sum_i (f_i - bar) e^{-i k theta_i} dtheta`,
/// `k = 1..=k_max`, of both shares on a racetrack grid.
pub fn mode_amplitudes(state: &PopulationState, space: &SpaceDiscretization, k_max: usize) -> Result<ModeAmplitudes> {
    let angles = racetrack_angles(space)?;
    space.check_len(state.n.len())?;
    space.check_len(state.m.len())?;
    if 2 * k_max >= angles.len() {
        log::warn!(
            "mode_amplitudes: k_max = {k_max} reaches the Nyquist index {} and aliases",
            angles.len() / 2
        );
    }
    let bar = space.uniform_density();
    let dtheta = 2.0 * PI / angles.len() as f64;
    let transform = |f: &[f64]| -> Vec<Complex64> {
        (1..=k_max)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (value, theta) in f.iter().zip(angles) {
                    acc += (value - bar) * Complex64::from_polar(1.0, -(k as f64) * theta);
                }
                acc * dtheta
            })
            .collect()
    };
    Ok(ModeAmplitudes { n_hat: transform(&state.n), m_hat: transform(&state.m) })
}

/// Inverse of [`mode_amplitudes`]: deviations `(n - bar, m - bar)` at the grid
/// nodes built from the given coefficients.
pub fn synthesize(amplitudes: &ModeAmplitudes, space: &SpaceDiscretization) -> Result<(Vec<f64>, Vec<f64>)> {
    let angles = racetrack_angles(space)?;
    let nyquist = angles.len() / 2;
    let build = |coeffs: &[Complex64]| -> Vec<f64> {
        angles
            .iter()
            .map(|theta| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| {
                        let k = j + 1;
                        // the Nyquist coefficient is its own conjugate partner
                        let weight = if k == nyquist { 0.5 / PI } else { 1.0 / PI };
                        weight * (c * Complex64::from_polar(1.0, k as f64 * theta)).re
                    })
                    .sum()
            })
            .collect()
    };
    Ok((build(&amplitudes.n_hat), build(&amplitudes.m_hat)))
}

fn racetrack_angles(space: &SpaceDiscretization) -> Result<&[f64]> {
    if space.kind() != SpaceKind::RacetrackGrid {
        return Err(Error::invalid("space", "Fourier analysis needs a racetrack grid"));
    }
    Ok(space.angles())
}

/// Cosine amplitude `|n_hat_k| / pi` bounds selecting the fitted snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthWindow {
    pub min_amplitude: f64,
    pub max_amplitude: f64,
}

impl GrowthWindow {
    /// `[10 epsilon bar, 1e-2 bar]`: above the seed, below nonlinear saturation.
    pub fn linear_regime(epsilon: f64, bar: f64) -> Self {
        Self { min_amplitude: 10.0 * epsilon * bar, max_amplitude: 1e-2 * bar }
    }

    fn contains(&self, amplitude: f64) -> bool {
        amplitude >= self.min_amplitude && amplitude <= self.max_amplitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    /// Least-squares slope of `ln |n_hat_k|` against time.
    pub rate: f64,
    pub intercept: f64,
    pub points: usize,
    pub t_start: f64,
    pub t_end: f64,
}

/// Exponential growth rate of mode `k` of `n` over snapshots inside `window`.
pub fn estimate_growth_rate(
    snapshots: &[Snapshot],
    space: &SpaceDiscretization,
    k: Mode,
    window: GrowthWindow,
) -> Result<GrowthEstimate> {
    let angles = racetrack_angles(space)?;
    let k = k.get().unsigned_abs() as f64;
    let bar = space.uniform_density();
    let dtheta = 2.0 * PI / angles.len() as f64;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for snap in snapshots {
        space.check_len(snap.n.len())?;
        let mut acc = Complex64::new(0.0, 0.0);
        for (value, theta) in snap.n.iter().zip(angles) {
            acc += (value - bar) * Complex64::from_polar(1.0, -k * theta);
        }
        let amplitude = (acc * dtheta).norm() / PI;
        if window.contains(amplitude) && amplitude > 0.0 {
            ts.push(snap.t);
            logs.push(amplitude.ln());
        }
    }
    if ts.len() < MIN_GROWTH_POINTS {
        return Err(Error::WindowTooShort { usable: ts.len(), required: MIN_GROWTH_POINTS });
    }
    let count = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / count;
    let l_mean = logs.iter().sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, l) in ts.iter().zip(&logs) {
        sxy += (t - t_mean) * (l - l_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    let rate = sxy / sxx;
    Ok(GrowthEstimate {
        rate,
        intercept: l_mean - rate * t_mean,
        points: ts.len(),
        t_start: ts[0],
        t_end: ts[ts.len() - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoagglomerationStats {
    /// `None` when `n` or `m` is constant.
    pub pearson_corr_nm: Option<f64>,
    /// The city arcs of `n` and of `m` are identical.
    pub same_peaks: bool,
    /// Max of `|(eta/omega) / (mu/sigma) - 1|` where `n, m > 100 * floor`.
    pub eta_omega_ratio_dev: f64,
    /// Same deviation restricted to points inside the cities of `n`.
    pub eta_omega_ratio_dev_cities: f64,
    pub city_points: usize,
}

pub fn coagglomeration_stats(
    state: &PopulationState,
    eq: &Equilibrium,
    space: &SpaceDiscretization,
    mu_over_sigma: f64,
    kappa: f64,
) -> Result<CoagglomerationStats> {
    check_kappa(kappa)?;
    for v in [&state.n, &state.m, &eq.eta, &eq.omega] {
        space.check_len(v.len())?;
    }
    let threshold = kappa * space.uniform_density();
    let n_arcs = arcs(&state.n, threshold);
    let same_peaks = n_arcs == arcs(&state.m, threshold);

    let deviation = |i: usize| (eq.eta[i] / eq.omega[i] / mu_over_sigma - 1.0).abs();
    let floor = 100.0 * share_floor(space);
    let eta_omega_ratio_dev = (0..state.len())
        .filter(|&i| state.n[i] > floor && state.m[i] > floor)
        .map(deviation)
        .fold(0.0, f64::max);
    let city_indices: Vec<usize> = n_arcs
        .iter()
        .flat_map(|&(start, len)| (0..len).map(move |o| (start + o) % state.len()))
        .collect();
    let eta_omega_ratio_dev_cities = city_indices.iter().map(|&i| deviation(i)).fold(0.0, f64::max);

    Ok(CoagglomerationStats {
        pearson_corr_nm: pearson(&state.n, &state.m),
        same_peaks,
        eta_omega_ratio_dev,
        eta_omega_ratio_dev_cities,
        city_points: city_indices.len(),
    })
}

/// `None` when either series is constant up to roundoff.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let flat = |v: &[f64]| {
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
        hi - lo <= 1e-13 * hi.abs().max(lo.abs())
    };
    if x.is_empty() || flat(x) || flat(y) {
        return None;
    }
    let count = x.len() as f64;
    let mx = x.iter().sum::<f64>() / count;
    let my = y.iter().sum::<f64>() / count;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve_equilibrium, EquilibriumOptions};
    use crate::geometry::build_racetrack;
    use crate::model::{make_perturbed_state, single_mode_state, ModelParams, PerturbationSpec};

    fn space(points: usize) -> SpaceDiscretization {
        build_racetrack(points, 1.0, 5.0, 1.0).unwrap()
    }

    fn spike_state(space: &SpaceDiscretization, cells: &[usize]) -> PopulationState {
        let mut state = PopulationState::homogeneous(space);
        let mass = 1.0 / (cells.len() as f64 * space.cell_weight());
        state.n = vec![0.0; space.region_count()];
        for &c in cells {
            state.n[c] = mass;
        }
        state.m = state.n.clone();
        state
    }

    #[test]
    fn homogeneous_state_has_no_cities() {
        let s = space(32);
        let report = detect_cities(&PopulationState::homogeneous(&s), &s, 2.0).unwrap();
        assert_eq!(report.city_count, 0);
        assert!((report.threshold_used - 2.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn single_spike_is_one_city_with_all_mass() {
        let s = space(32);
        for cell in [0, 13, 31] {
            let report = detect_cities(&spike_state(&s, &[cell]), &s, 2.0).unwrap();
            assert_eq!(report.city_count, 1);
            assert!((report.cities[0].mass_n - 1.0).abs() < 1e-12);
            assert!((report.cities[0].center_angle.unwrap() - s.angles()[cell]).abs() < 1e-12);
        }
    }

    #[test]
    fn spike_pair_across_the_seam_is_one_city() {
        let s = space(32);
        let report = detect_cities(&spike_state(&s, &[31, 0]), &s, 2.0).unwrap();
        assert_eq!(report.city_count, 1);
        assert_eq!((report.cities[0].start, report.cities[0].len), (31, 2));
        assert!((report.cities[0].mass_n - 1.0).abs() < 1e-12);
        // center lies on the seam at -pi/+pi
        assert!((report.cities[0].center_angle.unwrap().abs() - (PI - PI / 32.0)).abs() < 1e-12);
    }

    #[test]
    fn separate_spikes_and_full_circle() {
        let s = space(32);
        assert_eq!(detect_cities(&spike_state(&s, &[3, 4, 10, 20]), &s, 2.0).unwrap().city_count, 3);
        let everywhere = spike_state(&s, &(0..32).collect::<Vec<_>>());
        let report = detect_cities(&everywhere, &s, 1.0 + 1e-9).unwrap();
        assert_eq!(report.city_count, 0);
        let mut lifted = everywhere.clone();
        lifted.n.iter_mut().for_each(|v| *v *= 3.0);
        assert_eq!(detect_cities(&lifted, &s, 2.0).unwrap().cities[0].len, 32);
    }

    #[test]
    fn kappa_must_exceed_one() {
        let s = space(8);
        assert!(detect_cities(&PopulationState::homogeneous(&s), &s, 1.0).is_err());
    }

    #[test]
    fn cosine_mode_amplitude_matches_analytic_integral() {
        let s = space(64);
        let bar = s.uniform_density();
        let eps = 0.01;
        for k in [1, 3, 7] {
            let state = single_mode_state(&s, k, eps, 0.0).unwrap();
            let amps = mode_amplitudes(&state, &s, 31).unwrap();
            for (j, c) in amps.n_hat.iter().enumerate() {
                let expected = if j + 1 == k { eps * bar * PI } else { 0.0 };
                assert!((c - Complex64::new(expected, 0.0)).norm() < 1e-12, "k={k} j={j}");
            }
            assert!(amps.m_hat.iter().all(|c| c.norm() < 1e-14));
        }
    }

    #[test]
    fn synthesis_inverts_the_transform_for_band_limited_states() {
        let s = space(32);
        let state = make_perturbed_state(&s, &PerturbationSpec { epsilon: 0.2, seed: 5, mode_cutoff: 15 }).unwrap();
        let amps = mode_amplitudes(&state, &s, 15).unwrap();
        let (dn, dm) = synthesize(&amps, &s).unwrap();
        let bar = s.uniform_density();
        for i in 0..32 {
            assert!((dn[i] - (state.n[i] - bar)).abs() < 1e-12);
            assert!((dm[i] - (state.m[i] - bar)).abs() < 1e-12);
        }
    }

    #[test]
    fn nyquist_content_is_recovered_at_full_band() {
        let s = space(16);
        let bar = s.uniform_density();
        let mut state = PopulationState::homogeneous(&s);
        for (i, v) in state.n.iter_mut().enumerate() {
            *v = bar * (1.0 + 0.1 * if i % 2 == 0 { 1.0 } else { -1.0 });
        }
        let amps = mode_amplitudes(&state, &s, 8).unwrap();
        let (dn, _) = synthesize(&amps, &s).unwrap();
        for i in 0..16 {
            assert!((dn[i] - (state.n[i] - bar)).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_tools_reject_discrete_regions() {
        let regions = SpaceDiscretization::discrete_regions(&[vec![1.0, 2.0], vec![2.0, 1.0]], 5.0).unwrap();
        let state = PopulationState::new(vec![0.5; 2], vec![0.5; 2], vec![0.5; 2]);
        assert!(mode_amplitudes(&state, &regions, 1).is_err());
    }

    fn synthetic_snapshots(s: &SpaceDiscretization, k: usize, rate: f64, a0: f64, count: usize) -> Vec<Snapshot> {
        (0..count)
            .map(|h| {
                let t = h as f64;
                let state = single_mode_state(s, k, a0 * (rate * t).exp(), 0.0).unwrap();
                Snapshot {
                    step: h as u64,
                    t,
                    n: state.n,
                    m: state.m,
                    mass_n: 1.0,
                    mass_m: 1.0,
                    equilibrium: crate::equilibrium::EquilibriumSummary {
                        iterations: 0,
                        residual: 0.0,
                        floored_points: 0,
                        max_w: 1.0,
                        max_eta: 1.0,
                        max_omega: 1.0,
                    },
                }
            })
            .collect()
    }

    #[test]
    fn growth_rate_of_exact_exponential() {
        let s = space(32);
        let bar = s.uniform_density();
        let snaps = synthetic_snapshots(&s, 2, 0.05, 1e-5, 200);
        let est = estimate_growth_rate(&snaps, &s, Mode::new(2).unwrap(), GrowthWindow::linear_regime(1e-6, bar)).unwrap();
        assert!((est.rate - 0.05).abs() < 1e-10);
        assert!(est.t_end < 199.0);
        let decay = synthetic_snapshots(&s, 1, -0.02, 1e-3, 50);
        let window = GrowthWindow { min_amplitude: 0.0, max_amplitude: 1.0 };
        let est = estimate_growth_rate(&decay, &s, Mode::new(1).unwrap(), window).unwrap();
        assert!((est.rate + 0.02).abs() < 1e-10);
        assert_eq!(est.points, 50);
    }

    #[test]
    fn short_window_is_an_error() {
        let s = space(32);
        let snaps = synthetic_snapshots(&s, 1, 0.05, 1e-3, 4);
        let window = GrowthWindow { min_amplitude: 0.0, max_amplitude: 1.0 };
        assert!(matches!(
            estimate_growth_rate(&snaps, &s, Mode::new(1).unwrap(), window),
            Err(Error::WindowTooShort { usable: 4, required: 5 })
        ));
    }

    #[test]
    fn homogeneous_coagglomeration() {
        let s = space(32);
        let p = ModelParams::new(0.6, 5.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let state = PopulationState::homogeneous(&s);
        let eq = solve_equilibrium(&state, &p, &s, &EquilibriumOptions::default(), None).unwrap();
        let stats = coagglomeration_stats(&state, &eq, &s, 0.6 / 5.0, 2.0).unwrap();
        assert_eq!(stats.pearson_corr_nm, None);
        assert!(stats.same_peaks);
        assert!(stats.eta_omega_ratio_dev < 1e-14);
        assert_eq!(stats.city_points, 0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 1.0]), None);
    }
}
