//! Replicator dynamics for firms and workers, integrated with explicit Euler.
//!
//! Every step re-solves the market equilibrium for the current shares,
//! warm-started from the previous wage fixed point.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{share_floor, solve_equilibrium, Equilibrium, EquilibriumOptions, EquilibriumSummary};
use crate::error::{Error, Result};
use crate::geometry::SpaceDiscretization;
use crate::model::{ModelParams, PopulationState};

/// Largest number of step halvings before giving up on a step.
pub const MAX_HALVINGS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityPolicy {
    /// Retry the step with half the step size while any share would turn non-positive.
    #[default]
    HalveStep,
    /// Set offending shares to the floor and rescale to unit mass.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Stationary once both `max|n' - n|` and `max|m' - m|` drop below this.
    pub stop_tol: f64,
    pub max_time: f64,
    /// Keep a snapshot every this many accepted steps.
    pub record_every: usize,
    pub positivity: PositivityPolicy,
    pub equilibrium: EquilibriumOptions,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            stop_tol: 1e-10,
            max_time: 100_000.0,
            record_every: 100,
            positivity: PositivityPolicy::HalveStep,
            equilibrium: EquilibriumOptions::default(),
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("integrator.dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.stop_tol > 0.0) {
            return Err(Error::invalid("integrator.stop_tol", format!("must be > 0, got {}", self.stop_tol)));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::invalid("integrator.max_time", format!("must be > 0, got {}", self.max_time)));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("integrator.record_every", "must be >= 1"));
        }
        self.equilibrium.validate()
    }
}

/// Time derivatives `(dn/dt, dm/dt)` of the replicator equations.
pub fn replicator_rhs(
    state: &PopulationState,
    eq: &Equilibrium,
    params: &ModelParams,
    space: &SpaceDiscretization,
) -> Result<(Vec<f64>, Vec<f64>)> {
    for v in [&state.n, &state.m, &eq.eta, &eq.omega] {
        space.check_len(v.len())?;
    }
    Ok((
        replicator_component(&state.n, &eq.eta, params.v_n, space),
        replicator_component(&state.m, &eq.omega, params.v_m, space),
    ))
}

fn replicator_component(share: &[f64], payoff: &[f64], speed: f64, space: &SpaceDiscretization) -> Vec<f64> {
    let weighted: Vec<f64> = payoff.iter().zip(share).map(|(p, s)| p * s).collect();
    let average = space.integrate_unchecked(&weighted);
    payoff
        .iter()
        .zip(share)
        .map(|(p, s)| speed * (p - average) * s)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PopulationState,
    /// Step size actually taken.
    pub dt: f64,
    pub halvings: u32,
    /// Entries reset to the floor under [`PositivityPolicy::Clamp`].
    pub clamped: usize,
}

/// One explicit Euler step `s <- s (1 + dt v (payoff - average payoff))`.
pub fn euler_step(
    state: &PopulationState,
    eq: &Equilibrium,
    cfg: &IntegratorConfig,
    params: &ModelParams,
    space: &SpaceDiscretization,
) -> Result<StepOutcome> {
    let (dn, dm) = replicator_rhs(state, eq, params, space)?;
    // relative rates: the multiplier for entry i is 1 + dt * rate_i
    let rate = |d: &[f64], s: &[f64]| -> Vec<f64> {
        d.iter().zip(s).map(|(d, s)| if *s > 0.0 { d / s } else { 0.0 }).collect()
    };
    let rate_n = rate(&dn, &state.n);
    let rate_m = rate(&dm, &state.m);
    let worst = rate_n.iter().chain(&rate_m).copied().fold(0.0, f64::min);

    let advance = |dt: f64| -> PopulationState {
        let n = state.n.iter().zip(&rate_n).map(|(s, r)| s * (1.0 + dt * r)).collect();
        let m = state.m.iter().zip(&rate_m).map(|(s, r)| s * (1.0 + dt * r)).collect();
        PopulationState { n, m, phi: state.phi.clone(), t: state.t + dt }
    };

    match cfg.positivity {
        PositivityPolicy::HalveStep => {
            let mut dt = cfg.dt;
            let mut halvings = 0;
            while 1.0 + dt * worst <= 0.0 {
                if halvings == MAX_HALVINGS {
                    return Err(Error::StepCollapse { t: state.t, dt_floor: cfg.dt / f64::from(1u32 << MAX_HALVINGS) });
                }
                dt *= 0.5;
                halvings += 1;
            }
            if halvings > 0 {
                log::debug!("t = {}: step halved {halvings} times to keep shares positive", state.t);
            }
            Ok(StepOutcome { state: advance(dt), dt, halvings, clamped: 0 })
        }
        PositivityPolicy::Clamp => {
            let mut next = advance(cfg.dt);
            let floor = share_floor(space);
            let mut clamped = 0;
            for (share, rates) in [(&mut next.n, &rate_n), (&mut next.m, &rate_m)] {
                let mut hit = false;
                for (s, r) in share.iter_mut().zip(rates.iter()) {
                    if 1.0 + cfg.dt * r <= 0.0 {
                        *s = floor;
                        hit = true;
                        clamped += 1;
                    }
                }
                if hit {
                    let mass = space.integrate_unchecked(share);
                    share.iter_mut().for_each(|s| *s /= mass);
                }
            }
            if clamped > 0 {
                log::debug!("t = {}: clamped {clamped} shares to the floor", state.t);
            }
            Ok(StepOutcome { state: next, dt: cfg.dt, halvings: 0, clamped })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    MaxTime,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub t: f64,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub mass_n: f64,
    pub mass_m: f64,
    pub equilibrium: EquilibriumSummary,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Time-ordered; the initial and final states are always included.
    pub snapshots: Vec<Snapshot>,
    pub final_state: PopulationState,
    /// Equilibrium of `final_state`; absent only when the initial solve failed.
    pub final_equilibrium: Option<Equilibrium>,
    pub termination: Termination,
    pub failure: Option<Error>,
    pub steps: u64,
    /// Last accepted displacements `max|n' - n|`, `max|m' - m|`.
    pub last_displacement: (f64, f64),
    pub max_mass_drift: f64,
    pub min_share: f64,
    pub total_halvings: u64,
    pub total_clamped: u64,
    pub equilibrium_iterations: u64,
    pub wall_time: Duration,
}

/// Read-only view handed to observers after every accepted step.
pub struct StepView<'a> {
    pub step: u64,
    pub state: &'a PopulationState,
    pub equilibrium: &'a Equilibrium,
    pub dt: f64,
}

pub fn run_to_stationary(
    initial: &PopulationState,
    cfg: &IntegratorConfig,
    params: &ModelParams,
    space: &SpaceDiscretization,
) -> Result<Trajectory> {
    run_with_observer(initial, cfg, params, space, |_| {})
}

/// Like [`run_to_stationary`], calling `observer` on the initial state (step 0)
/// and after every accepted step.
pub fn run_with_observer(
    initial: &PopulationState,
    cfg: &IntegratorConfig,
    params: &ModelParams,
    space: &SpaceDiscretization,
    mut observer: impl FnMut(&StepView<'_>),
) -> Result<Trajectory> {
    cfg.validate()?;
    initial.validate(space, 1e-9)?;
    crate::equilibrium::check_compatible(params, space)?;
    let started = Instant::now();

    let mut traj = Trajectory {
        snapshots: Vec::new(),
        final_state: initial.clone(),
        final_equilibrium: None,
        termination: Termination::Failure,
        failure: None,
        steps: 0,
        last_displacement: (f64::NAN, f64::NAN),
        max_mass_drift: 0.0,
        min_share: f64::INFINITY,
        total_halvings: 0,
        total_clamped: 0,
        equilibrium_iterations: 0,
        wall_time: Duration::ZERO,
    };
    track_state(&mut traj, space, initial);

    let mut eq = match solve_equilibrium(initial, params, space, &cfg.equilibrium, None) {
        Ok(eq) => eq,
        Err(err) => {
            traj.failure = Some(err);
            traj.wall_time = started.elapsed();
            return Ok(traj);
        }
    };
    traj.equilibrium_iterations += eq.iterations as u64;
    let mut state = initial.clone();
    let mut previous: Option<(Vec<f64>, f64)> = None;
    let mut guess = vec![0.0; state.len()];
    observer(&StepView { step: 0, state: &state, equilibrium: &eq, dt: 0.0 });
    traj.snapshots.push(snapshot(0, &state, &eq, space));

    let termination = loop {
        if state.t >= cfg.max_time {
            break Termination::MaxTime;
        }
        let outcome = match euler_step(&state, &eq, cfg, params, space) {
            Ok(outcome) => outcome,
            Err(err) => {
                traj.failure = Some(err);
                break Termination::Failure;
            }
        };
        // log-linear extrapolation of W from the last two accepted steps
        match &previous {
            Some((older, older_dt)) => {
                let ratio = outcome.dt / older_dt;
                for ((g, now), before) in guess.iter_mut().zip(&eq.wage_power).zip(older) {
                    *g = now * (now / before).powf(ratio);
                }
            }
            None => guess.copy_from_slice(&eq.wage_power),
        }
        let next_eq = match solve_equilibrium(&outcome.state, params, space, &cfg.equilibrium, Some(&guess)) {
            Ok(next_eq) => next_eq,
            Err(err) => {
                traj.failure = Some(err);
                break Termination::Failure;
            }
        };
        traj.steps += 1;
        traj.total_halvings += u64::from(outcome.halvings);
        traj.total_clamped += outcome.clamped as u64;
        traj.equilibrium_iterations += next_eq.iterations as u64;
        let displacement = (
            max_abs_diff(&outcome.state.n, &state.n),
            max_abs_diff(&outcome.state.m, &state.m),
        );
        traj.last_displacement = displacement;
        state = outcome.state;
        previous = Some((std::mem::replace(&mut eq, next_eq).wage_power, outcome.dt));
        track_state(&mut traj, space, &state);
        observer(&StepView { step: traj.steps, state: &state, equilibrium: &eq, dt: outcome.dt });
        if traj.steps.is_multiple_of(cfg.record_every as u64) {
            traj.snapshots.push(snapshot(traj.steps, &state, &eq, space));
        }
        if displacement.0 < cfg.stop_tol && displacement.1 < cfg.stop_tol {
            break Termination::Stationary;
        }
    };

    if traj.snapshots.last().map(|s| s.step) != Some(traj.steps) {
        traj.snapshots.push(snapshot(traj.steps, &state, &eq, space));
    }
    traj.termination = termination;
    traj.final_state = state;
    traj.final_equilibrium = Some(eq);
    traj.wall_time = started.elapsed();
    if let Some(err) = &traj.failure {
        log::warn!("run failed after {} steps: {err}", traj.steps);
    }
    Ok(traj)
}

fn track_state(traj: &mut Trajectory, space: &SpaceDiscretization, state: &PopulationState) {
    let drift_n = (space.integrate_unchecked(&state.n) - 1.0).abs();
    let drift_m = (space.integrate_unchecked(&state.m) - 1.0).abs();
    traj.max_mass_drift = traj.max_mass_drift.max(drift_n).max(drift_m);
    let min = state.n.iter().chain(&state.m).copied().fold(f64::INFINITY, f64::min);
    traj.min_share = traj.min_share.min(min);
}

fn snapshot(step: u64, state: &PopulationState, eq: &Equilibrium, space: &SpaceDiscretization) -> Snapshot {
    Snapshot {
        step,
        t: state.t,
        n: state.n.clone(),
        m: state.m.clone(),
        mass_n: space.integrate_unchecked(&state.n),
        mass_m: space.integrate_unchecked(&state.m),
        equilibrium: eq.summary(),
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
