//! The four subcommands. Each writes its artifacts into an output directory
//! and returns the computed data for callers that want to inspect it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dualcp_core::analysis::{coagglomeration_stats, detect_cities, mode_amplitudes, CityReport, CoagglomerationStats};
use dualcp_core::dynamics::{run_to_stationary, Termination, Trajectory};
use dualcp_core::equilibrium::{solve_equilibrium, Equilibrium};
use dualcp_core::geometry::{SpaceDiscretization, SpaceKind};
use dualcp_core::model::{no_black_hole, PopulationState, RNG_NAME};
use dualcp_core::stability::{critical_tau, critical_tau_bisection, spectrum_scan, z_star, CriticalPoint, Mode, ModeSpectrum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{OutputFormat, RunConfig};
use crate::csv::{num, read_columns, write_file, Table};
use crate::error::{CliError, CliResult};
use crate::svg::{line_plot, Series};

/// Fourier modes tracked per snapshot in `trajectory.csv`.
const TRACKED_MODES: usize = 8;

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn position_column(space: &SpaceDiscretization) -> &'static str {
    match space.kind() {
        SpaceKind::RacetrackGrid => "theta",
        SpaceKind::DiscreteRegions => "region",
    }
}

fn position(space: &SpaceDiscretization, i: usize) -> String {
    match space.angles().get(i) {
        Some(theta) => num(*theta),
        None => i.to_string(),
    }
}

fn positions(space: &SpaceDiscretization) -> Vec<f64> {
    (0..space.region_count()).map(|i| space.angles().get(i).copied().unwrap_or(i as f64)).collect()
}

#[derive(Debug)]
pub struct SimulationOutcome {
    pub trajectory: Trajectory,
    pub cities: Option<CityReport>,
    pub coagglomeration: Option<CoagglomerationStats>,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl SimulationOutcome {
    pub fn converged(&self) -> bool {
        self.trajectory.termination == Termination::Stationary
    }
}

/// Runs one simulation and writes its artifacts. A failed trajectory is not an
/// error here; it is reported in the outcome and in `run_metadata.json`.
pub fn simulate_run(config: &RunConfig, out: &Path) -> CliResult<SimulationOutcome> {
    config.validate()?;
    ensure_dir(out)?;
    let hash = config.hash();
    let seed = config.perturbation.seed;
    let space = config.build_space()?;
    let initial = config.initial_population(&space)?;
    let started = Instant::now();
    let trajectory = run_to_stationary(&initial, &config.integrator, &config.model, &space)?;
    let wall = started.elapsed();

    write_trajectory(config, &space, &trajectory, &hash, seed, out)?;
    write_state(config, &space, &trajectory.final_state, &hash, seed, out)?;
    let (cities, coagglomeration) = match &trajectory.final_equilibrium {
        Some(eq) => {
            write_equilibrium(config, &space, eq, &hash, seed, out)?;
            let kappa = config.cities.kappa;
            let cities = detect_cities(&trajectory.final_state, &space, kappa)?;
            let mu_over_sigma = config.model.mu / config.model.sigma;
            let stats = coagglomeration_stats(&trajectory.final_state, eq, &space, mu_over_sigma, kappa)?;
            write_json(
                &out.join("cities.json"),
                &json!({
                    "config_hash": hash,
                    "seed": seed,
                    "kappa": kappa,
                    "report": cities,
                    "coagglomeration": stats,
                }),
            )?;
            (Some(cities), Some(stats))
        }
        None => (None, None),
    };

    write_json(
        &out.join("run_metadata.json"),
        &json!({
            "config_hash": hash,
            "seed": seed,
            "rng": RNG_NAME,
            "versions": {
                "dualcp-cli": env!("CARGO_PKG_VERSION"),
            },
            "config": config,
            "termination": trajectory.termination,
            "failure": trajectory.failure.as_ref().map(|e| json!({"error": e.kind(), "message": e.to_string()})),
            "steps": trajectory.steps,
            "t_final": trajectory.final_state.t,
            "last_displacement": [trajectory.last_displacement.0, trajectory.last_displacement.1],
            "max_mass_drift": trajectory.max_mass_drift,
            "min_share": trajectory.min_share,
            "step_halvings": trajectory.total_halvings,
            "clamped_shares": trajectory.total_clamped,
            "equilibrium_iterations": trajectory.equilibrium_iterations,
            "timings": {
                "wall_seconds": wall.as_secs_f64(),
                "integration_seconds": trajectory.wall_time.as_secs_f64(),
            },
        }),
    )?;

    Ok(SimulationOutcome { trajectory, cities, coagglomeration, config_hash: hash, seed, out_dir: out.to_path_buf() })
}

/// [`simulate_run`], turning a failed trajectory into an error after the
/// artifacts are written.
pub fn simulate(config: &RunConfig, out: &Path) -> CliResult<SimulationOutcome> {
    let outcome = simulate_run(config, out)?;
    match &outcome.trajectory.failure {
        Some(err) => Err(CliError::Model(err.clone())),
        None => Ok(outcome),
    }
}

fn write_trajectory(
    config: &RunConfig,
    space: &SpaceDiscretization,
    trajectory: &Trajectory,
    hash: &str,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let fourier = space.kind() == SpaceKind::RacetrackGrid;
    let tracked = if fourier { TRACKED_MODES.min(space.region_count() / 2 - 1) } else { 0 };
    let mut columns: Vec<String> = [
        "step", "t", "mass_n", "mass_m", "max_n", "max_m", "eq_iterations", "eq_residual", "floored_points",
        "max_w", "max_eta", "max_omega",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    columns.extend((1..=tracked).map(|k| format!("abs_n_hat_{k}")));
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut table = Table::new(hash, seed, &names);
    for snap in &trajectory.snapshots {
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let eq = &snap.equilibrium;
        let mut row = vec![
            snap.step.to_string(),
            num(snap.t),
            num(snap.mass_n),
            num(snap.mass_m),
            num(max(&snap.n)),
            num(max(&snap.m)),
            eq.iterations.to_string(),
            num(eq.residual),
            eq.floored_points.to_string(),
            num(eq.max_w),
            num(eq.max_eta),
            num(eq.max_omega),
        ];
        if tracked > 0 {
            let state = PopulationState::new(snap.n.clone(), snap.m.clone(), trajectory.final_state.phi.clone());
            let amps = mode_amplitudes(&state, space, tracked)?;
            row.extend(amps.n_hat.iter().map(|c| num(c.norm())));
        }
        table.row(&row);
    }
    table.write(&out.join("trajectory.csv"))?;

    if config.output.full_snapshots {
        let mut table = Table::new(hash, seed, &["step", "t", "index", position_column(space), "n", "m"]);
        for snap in &trajectory.snapshots {
            for i in 0..snap.n.len() {
                table.row(&[
                    snap.step.to_string(),
                    num(snap.t),
                    i.to_string(),
                    position(space, i),
                    num(snap.n[i]),
                    num(snap.m[i]),
                ]);
            }
        }
        table.write(&out.join("snapshots.csv"))?;
    }
    if config.output.wants(OutputFormat::Json) {
        write_json(&out.join("trajectory.json"), &trajectory.snapshots)?;
    }
    Ok(())
}

fn write_state(
    config: &RunConfig,
    space: &SpaceDiscretization,
    state: &PopulationState,
    hash: &str,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let mut table = Table::new(hash, seed, &["index", position_column(space), "n", "m", "phi"]);
    for i in 0..state.len() {
        table.row(&[i.to_string(), position(space, i), num(state.n[i]), num(state.m[i]), num(state.phi[i])]);
    }
    table.write(&out.join("final_state.csv"))?;
    if config.output.wants(OutputFormat::Json) {
        write_json(&out.join("final_state.json"), state)?;
    }
    if config.output.wants(OutputFormat::Svg) {
        let x = positions(space);
        let n: Vec<(f64, f64)> = x.iter().copied().zip(state.n.iter().copied()).collect();
        let m: Vec<(f64, f64)> = x.iter().copied().zip(state.m.iter().copied()).collect();
        let svg = line_plot(
            &format!("Share functions at t = {:.2}", state.t),
            position_column(space),
            "share density",
            &[Series { name: "n (firms)".into(), points: &n }, Series { name: "m (workers)".into(), points: &m }],
        );
        write_file(&out.join("shares.svg"), svg.as_bytes())?;
    }
    Ok(())
}

fn write_equilibrium(
    config: &RunConfig,
    space: &SpaceDiscretization,
    eq: &Equilibrium,
    hash: &str,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let mut table = Table::new(hash, seed, &["index", position_column(space), "y", "w", "g", "omega", "eta"]);
    for i in 0..eq.w.len() {
        table.row(&[
            i.to_string(),
            position(space, i),
            num(eq.y[i]),
            num(eq.w[i]),
            num(eq.g[i]),
            num(eq.omega[i]),
            num(eq.eta[i]),
        ]);
    }
    table.write(&out.join("equilibrium.csv"))?;
    if config.output.wants(OutputFormat::Json) {
        write_json(&out.join("equilibrium.json"), eq)?;
    }
    if config.output.wants(OutputFormat::Svg) {
        let x = positions(space);
        let eta: Vec<(f64, f64)> = x.iter().copied().zip(eq.eta.iter().copied()).collect();
        let omega: Vec<(f64, f64)> = x.iter().copied().zip(eq.omega.iter().copied()).collect();
        let svg = line_plot(
            "Real profit and real wage",
            position_column(space),
            "value",
            &[Series { name: "eta".into(), points: &eta }, Series { name: "omega".into(), points: &omega }],
        );
        write_file(&out.join("payoffs.svg"), svg.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct StabilityOutcome {
    pub spectra: Vec<ModeSpectrum>,
    pub critical_points: Vec<CriticalPoint>,
    /// Bisection result for each entry of `critical_points`.
    pub bisection: Vec<CriticalPoint>,
    pub z_star: f64,
    pub warnings: Vec<String>,
}

pub fn stability(config: &RunConfig, out: &Path) -> CliResult<StabilityOutcome> {
    config.validate()?;
    ensure_dir(out)?;
    let hash = config.hash();
    let seed = config.perturbation.seed;
    let modes = config.stability.modes.iter().map(|&k| Mode::new(k)).collect::<Result<Vec<_>, _>>()?;
    let taus = config.stability.tau_grid.values();
    let spectra = spectrum_scan(&modes, &taus, &config.model)?;
    let (mu, sigma, rho) = (config.model.mu, config.model.sigma, config.model.rho);

    let mut table = Table::new(
        &hash,
        seed,
        &["k", "tau", "z_k", "a", "b", "delta", "re_lambda1", "im_lambda1", "re_lambda2", "im_lambda2", "max_re"],
    );
    for s in &spectra {
        table.row(&[
            s.k.to_string(),
            num(s.tau),
            num(s.z_k),
            num(s.a),
            num(s.b),
            num(s.delta),
            num(s.eigenvalues[0].re),
            num(s.eigenvalues[0].im),
            num(s.eigenvalues[1].re),
            num(s.eigenvalues[1].im),
            num(s.max_real_part),
        ]);
    }
    table.write(&out.join("stability.csv"))?;

    let mut warnings = Vec::new();
    let mut critical_points = Vec::new();
    let mut bisection = Vec::new();
    if no_black_hole(mu, sigma) {
        for &mode in &modes {
            critical_points.push(critical_tau(mode, mu, sigma, rho)?);
            bisection.push(critical_tau_bisection(mode, mu, sigma, rho)?);
        }
    } else {
        let warning = format!(
            "no-black-hole condition 1/(1-mu) < sigma fails (mu = {mu}, sigma = {sigma}): \
             critical points need not exist and none are reported"
        );
        log::warn!("{warning}");
        warnings.push(warning);
    }
    let mut table = Table::new(&hash, seed, &["k", "z_star", "x_star", "tau_star", "tau_star_bisection", "method"]);
    for (c, b) in critical_points.iter().zip(&bisection) {
        let method = serde_json::to_value(c.method).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        table.row(&[c.k.to_string(), num(c.z_star), num(c.x_star), num(c.tau_star), num(b.tau_star), method]);
    }
    table.write(&out.join("critical_points.csv"))?;

    if config.output.wants(OutputFormat::Json) {
        write_json(&out.join("stability.json"), &json!({ "spectra": spectra, "critical_points": critical_points }))?;
    }
    if config.output.wants(OutputFormat::Svg) {
        let curves: Vec<(i64, Vec<(f64, f64)>)> = spectra
            .chunks(taus.len())
            .map(|rows| (rows[0].k, rows.iter().map(|s| (s.tau, s.max_real_part)).collect()))
            .collect();
        let series: Vec<Series<'_>> =
            curves.iter().map(|(k, points)| Series { name: format!("k = {k}"), points }).collect();
        let svg = line_plot("Maximal real part of eigenvalues", "tau", "max Re lambda", &series);
        write_file(&out.join("stability.svg"), svg.as_bytes())?;
    }
    Ok(StabilityOutcome { spectra, critical_points, bisection, z_star: z_star(mu, sigma), warnings })
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub tau: f64,
    pub seed: u64,
    pub termination: Option<Termination>,
    pub error: Option<String>,
    pub city_count: Option<usize>,
    pub steps: u64,
    pub t_final: f64,
    pub max_n_over_bar: f64,
    pub pearson_corr_nm: Option<f64>,
    pub same_peaks: Option<bool>,
    pub eta_omega_dev_cities: Option<f64>,
    pub max_mass_drift: f64,
    pub min_share: f64,
    pub wall_seconds: f64,
}

impl CellResult {
    pub fn converged(&self) -> bool {
        self.termination == Some(Termination::Stationary)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TauSummary {
    pub tau: f64,
    /// Largest city count over converged runs.
    pub max_city_count: Option<usize>,
    pub converged_runs: usize,
    pub runs: usize,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    pub per_tau: Vec<TauSummary>,
}

fn cell_dir(out: &Path, tau: f64, seed: u64) -> PathBuf {
    out.join("cells").join(format!("tau_{tau}_seed_{seed}"))
}

pub fn sweep(config: &RunConfig, out: &Path) -> CliResult<SweepOutcome> {
    config.validate()?;
    ensure_dir(out)?;
    let hash = config.hash();
    let base_seed = config.sweep.base_seed;
    let cells: Vec<(f64, u64)> = config
        .sweep
        .taus
        .iter()
        .flat_map(|&tau| (0..config.sweep.seeds_per_tau as u64).map(move |j| (tau, base_seed + j)))
        .collect();

    let run_cell = |&(tau, seed): &(f64, u64)| -> CellResult {
        let cell_config = config.with_tau(tau).with_seed(seed);
        let started = Instant::now();
        let result = simulate_run(&cell_config, &cell_dir(out, tau, seed));
        let wall_seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(outcome) => {
                let traj = &outcome.trajectory;
                let bar = 1.0 / (2.0 * std::f64::consts::PI * cell_config.model.rho);
                let max_n = traj.final_state.n.iter().copied().fold(0.0, f64::max);
                log::info!("tau = {tau}, seed = {seed}: {:?} after {} steps", traj.termination, traj.steps);
                CellResult {
                    tau,
                    seed,
                    termination: Some(traj.termination),
                    error: traj.failure.as_ref().map(|e| e.to_string()),
                    city_count: outcome.cities.as_ref().map(|c| c.city_count),
                    steps: traj.steps,
                    t_final: traj.final_state.t,
                    max_n_over_bar: max_n / bar,
                    pearson_corr_nm: outcome.coagglomeration.as_ref().and_then(|s| s.pearson_corr_nm),
                    same_peaks: outcome.coagglomeration.as_ref().map(|s| s.same_peaks),
                    eta_omega_dev_cities: outcome.coagglomeration.as_ref().map(|s| s.eta_omega_ratio_dev_cities),
                    max_mass_drift: traj.max_mass_drift,
                    min_share: traj.min_share,
                    wall_seconds,
                }
            }
            Err(err) => {
                log::warn!("tau = {tau}, seed = {seed} failed: {err}");
                CellResult {
                    tau,
                    seed,
                    termination: None,
                    error: Some(err.to_string()),
                    city_count: None,
                    steps: 0,
                    t_final: 0.0,
                    max_n_over_bar: f64::NAN,
                    pearson_corr_nm: None,
                    same_peaks: None,
                    eta_omega_dev_cities: None,
                    max_mass_drift: f64::NAN,
                    min_share: f64::NAN,
                    wall_seconds,
                }
            }
        }
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(workers) = config.sweep.workers {
        builder = builder.num_threads(workers);
    }
    let pool = builder.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| cells.par_iter().map(run_cell).collect());

    let per_tau: Vec<TauSummary> = config
        .sweep
        .taus
        .iter()
        .map(|&tau| {
            let rows: Vec<&CellResult> = results.iter().filter(|r| r.tau == tau).collect();
            TauSummary {
                tau,
                max_city_count: rows.iter().filter(|r| r.converged()).filter_map(|r| r.city_count).max(),
                converged_runs: rows.iter().filter(|r| r.converged()).count(),
                runs: rows.len(),
            }
        })
        .collect();

    let opt_num = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut table = Table::new(
        &hash,
        base_seed,
        &[
            "tau", "seed", "city_count", "converged", "termination", "steps", "t_final", "max_n_over_bar",
            "pearson_corr_nm", "same_peaks", "eta_omega_dev_cities", "max_mass_drift",
        ],
    );
    for r in &results {
        let termination = r
            .termination
            .map(|t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .unwrap_or_else(|| "error".into());
        table.row(&[
            num(r.tau),
            r.seed.to_string(),
            r.city_count.map(|c| c.to_string()).unwrap_or_default(),
            r.converged().to_string(),
            termination,
            r.steps.to_string(),
            num(r.t_final),
            num(r.max_n_over_bar),
            opt_num(r.pearson_corr_nm),
            r.same_peaks.map(|b| b.to_string()).unwrap_or_default(),
            opt_num(r.eta_omega_dev_cities),
            num(r.max_mass_drift),
        ]);
    }
    table.write(&out.join("summary.csv"))?;

    let mut table = Table::new(&hash, base_seed, &["tau", "max_city_count", "converged_runs", "runs"]);
    for s in &per_tau {
        table.row(&[
            num(s.tau),
            s.max_city_count.map(|c| c.to_string()).unwrap_or_default(),
            s.converged_runs.to_string(),
            s.runs.to_string(),
        ]);
    }
    table.write(&out.join("max_cities.csv"))?;

    write_json(
        &out.join("sweep_metadata.json"),
        &json!({
            "config_hash": hash,
            "base_seed": base_seed,
            "cells": results.iter().map(|r| json!({
                "tau": r.tau,
                "seed": r.seed,
                "error": r.error,
                "wall_seconds": r.wall_seconds,
            })).collect::<Vec<_>>(),
        }),
    )?;
    if config.output.wants(OutputFormat::Json) {
        write_json(&out.join("summary.json"), &json!({ "cells": results, "per_tau": per_tau }))?;
    }
    Ok(SweepOutcome { cells: results, per_tau })
}

/// One-shot market equilibrium for the configured initial state, or for the
/// `n`, `m` (and optional `phi`) columns of a CSV such as `final_state.csv`.
pub fn equilibrium(config: &RunConfig, out: &Path, state_file: Option<&Path>) -> CliResult<Equilibrium> {
    config.validate()?;
    ensure_dir(out)?;
    let hash = config.hash();
    let seed = config.perturbation.seed;
    let space = config.build_space()?;
    let state = match state_file {
        Some(path) => {
            let columns = read_columns(path)?;
            let column = |name: &str| columns.iter().find(|(h, _)| h == name).map(|(_, v)| v.clone());
            let n = column("n").ok_or_else(|| CliError::Config(format!("{}: no `n` column", path.display())))?;
            let m = column("m").ok_or_else(|| CliError::Config(format!("{}: no `m` column", path.display())))?;
            let phi = column("phi").unwrap_or_else(|| vec![space.uniform_density(); space.region_count()]);
            let state = PopulationState::new(n, m, phi);
            state.validate(&space, 1e-9)?;
            state
        }
        None => config.initial_population(&space)?,
    };
    let eq = solve_equilibrium(&state, &config.model, &space, &config.integrator.equilibrium, None)?;
    write_equilibrium(config, &space, &eq, &hash, seed, out)?;
    write_json(
        &out.join("equilibrium_metadata.json"),
        &json!({ "config_hash": hash, "seed": seed, "summary": eq.summary(), "floored": eq.floored }),
    )?;
    Ok(eq)
}
