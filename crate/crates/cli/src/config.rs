//! Run configuration: one JSON document, every section optional.

use std::path::{Path, PathBuf};

use dualcp_core::dynamics::IntegratorConfig;
use dualcp_core::geometry::{KernelQuadrature, SpaceDiscretization};
use dualcp_core::model::{ModelParams, PerturbationSpec, PopulationState};
use dualcp_core::stability::Mode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelParams,
    pub space: SpaceConfig,
    pub integrator: IntegratorConfig,
    pub perturbation: PerturbationSpec,
    /// Explicit initial shares; replaces the random perturbation when present.
    pub initial_state: Option<InitialState>,
    pub stability: StabilityConfig,
    pub sweep: SweepConfig,
    pub cities: CityConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    Racetrack {
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        #[serde(default)]
        quadrature: KernelQuadrature,
    },
    /// Explicit regions with a symmetric transport-cost matrix `T >= 1`.
    Regions { transport_costs: Vec<Vec<f64>> },
}

fn default_grid_points() -> usize {
    256
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig::Racetrack { grid_points: default_grid_points(), quadrature: KernelQuadrature::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    /// Defaults to the uniform density.
    #[serde(default)]
    pub phi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub modes: Vec<i64>,
    pub tau_grid: TauGrid,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self { modes: vec![1, 2, 3, 4, 5], tau_grid: TauGrid::default() }
    }
}

/// `count` evenly spaced values from `start` to `stop`, both included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl Default for TauGrid {
    fn default() -> Self {
        Self { start: 0.01, stop: 6.0, count: 600 }
    }
}

impl TauGrid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.stop - self.start) / (self.count - 1) as f64;
        (0..self.count).map(|i| self.start + step * i as f64).collect()
    }

    pub fn resolution(&self) -> f64 {
        if self.count > 1 {
            (self.stop - self.start) / (self.count - 1) as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub seeds_per_tau: usize,
    /// Seeds of each tau are `base_seed, base_seed + 1, ...`.
    pub base_seed: u64,
    /// Worker threads; `None` uses one per core.
    pub workers: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { taus: vec![0.5, 0.7, 1.1, 1.7, 2.0], seeds_per_tau: 5, base_seed: 0, workers: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CityConfig {
    /// City threshold as a multiple of the uniform density.
    pub kappa: f64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self { kappa: dualcp_core::analysis::DEFAULT_CITY_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// CSV is always written; `json` and `svg` add copies and plots.
    pub formats: Vec<OutputFormat>,
    /// Also write every recorded snapshot's full profiles to `snapshots.csv`.
    pub full_snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), formats: vec![OutputFormat::Csv], full_snapshots: false }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: OutputFormat) -> bool {
        format == OutputFormat::Csv || self.formats.contains(&format)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every section before any computation starts.
    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.integrator.validate()?;
        let space = self.build_space()?;
        let p = &self.perturbation;
        if !(p.epsilon >= 0.0 && p.epsilon * p.mode_cutoff as f64 <= 1.0) {
            return Err(CliError::Config(format!(
                "perturbation.epsilon must lie in [0, 1/mode_cutoff], got {}",
                p.epsilon
            )));
        }
        match &self.initial_state {
            Some(init) if init.n.len() != space.region_count() => {
                return Err(CliError::Config("initial_state length differs from the space".into()));
            }
            None if matches!(self.space, SpaceConfig::Regions { .. }) => {
                return Err(CliError::Config("discrete regions need an explicit initial_state".into()));
            }
            _ => drop(self.initial_population(&space)?),
        }
        for &k in &self.stability.modes {
            Mode::new(k)?;
        }
        let grid = &self.stability.tau_grid;
        if !(grid.start > 0.0 && grid.stop >= grid.start && grid.count >= 1) {
            return Err(CliError::Config("stability.tau_grid needs 0 < start <= stop and count >= 1".into()));
        }
        if self.sweep.seeds_per_tau == 0 {
            return Err(CliError::Config("sweep.seeds_per_tau must be >= 1".into()));
        }
        for &tau in &self.sweep.taus {
            self.model.with_tau(tau).validate()?;
        }
        if self.sweep.workers == Some(0) {
            return Err(CliError::Config("sweep.workers must be >= 1".into()));
        }
        if !(self.cities.kappa > 1.0) {
            return Err(CliError::Config(format!("cities.kappa must be > 1, got {}", self.cities.kappa)));
        }
        Ok(())
    }

    pub fn build_space(&self) -> CliResult<SpaceDiscretization> {
        Ok(match &self.space {
            SpaceConfig::Racetrack { grid_points, quadrature } => SpaceDiscretization::racetrack(
                *grid_points,
                self.model.rho,
                self.model.sigma,
                self.model.tau,
                *quadrature,
            )?,
            SpaceConfig::Regions { transport_costs } => {
                SpaceDiscretization::discrete_regions(transport_costs, self.model.sigma)?
            }
        })
    }

    /// The explicit initial state when given, otherwise the seeded perturbation
    /// of the homogeneous state.
    pub fn initial_population(&self, space: &SpaceDiscretization) -> CliResult<PopulationState> {
        match &self.initial_state {
            Some(init) => {
                let phi = init
                    .phi
                    .clone()
                    .unwrap_or_else(|| vec![space.uniform_density(); space.region_count()]);
                let state = PopulationState::new(init.n.clone(), init.m.clone(), phi);
                state.validate(space, 1e-9)?;
                Ok(state)
            }
            None => Ok(dualcp_core::model::make_perturbed_state(space, &self.perturbation)?),
        }
    }

    /// SHA-256 of the canonical JSON of everything except the output section.
    pub fn hash(&self) -> String {
        let mut hashed = self.clone();
        hashed.output = OutputConfig::default();
        let canonical = serde_json::to_string(&hashed).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut config = self.clone();
        config.perturbation.seed = seed;
        config
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        let mut config = self.clone();
        config.model.tau = tau;
        config
    }
}
