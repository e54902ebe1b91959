use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dualcp_cli::commands;
use dualcp_cli::config::OutputFormat;
use dualcp_cli::{CliError, CliResult, RunConfig};

/// Dual-migration core-periphery model on the racetrack economy.
#[derive(Parser)]
#[command(name = "dualcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the replicator dynamics to a stationary state.
    Simulate(Common),
    /// Tabulate eigenvalues of the homogeneous state and critical transport costs.
    Stability(Common),
    /// Simulate every (tau, seed) pair and summarize city counts.
    Sweep(Common),
    /// Solve the market equilibrium for one state.
    Equilibrium {
        #[command(flatten)]
        common: Common,
        /// CSV with `n`, `m` and optionally `phi` columns (e.g. a final_state.csv).
        #[arg(long)]
        state: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Perturbation seed; the base seed for sweeps.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact formats; CSV is always written.
    #[arg(long, value_enum)]
    format: Vec<OutputFormat>,
}

impl Common {
    fn resolve(&self, sweep: bool) -> CliResult<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            config.output.dir = out.clone();
        }
        if let Some(seed) = self.seed {
            if sweep {
                config.sweep.base_seed = seed;
            } else {
                config.perturbation.seed = seed;
            }
        }
        if !self.format.is_empty() {
            config.output.formats = self.format.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(common) => {
            let config = common.resolve(false)?;
            let outcome = commands::simulate(&config, &config.output.dir)?;
            let traj = &outcome.trajectory;
            println!(
                "{:?} after {} steps (t = {}); {} cities; artifacts in {}",
                traj.termination,
                traj.steps,
                traj.final_state.t,
                outcome.cities.map_or(0, |c| c.city_count),
                outcome.out_dir.display()
            );
        }
        Command::Stability(common) => {
            let config = common.resolve(false)?;
            let outcome = commands::stability(&config, &config.output.dir)?;
            for warning in &outcome.warnings {
                eprintln!("warning: {warning}");
            }
            println!("Z* = {}", outcome.z_star);
            for c in &outcome.critical_points {
                println!("k = {}: tau* = {}", c.k, c.tau_star);
            }
        }
        Command::Sweep(common) => {
            let config = common.resolve(true)?;
            let outcome = commands::sweep(&config, &config.output.dir)?;
            for s in &outcome.per_tau {
                let max = s.max_city_count.map_or("-".to_string(), |c| c.to_string());
                println!("tau = {}: max cities {max} ({}/{} converged)", s.tau, s.converged_runs, s.runs);
            }
        }
        Command::Equilibrium { common, state } => {
            let config = common.resolve(false)?;
            let eq = commands::equilibrium(&config, &config.output.dir, state.as_deref())?;
            println!("converged in {} iterations (residual {:e})", eq.iterations, eq.residual);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.report());
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &CliError) -> u8 {
    err.exit_code().clamp(1, 255) as u8
}
