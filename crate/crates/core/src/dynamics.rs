//! Fixed-step RK4 integration over control stages and the rollout drivers
//! built on top of it.
//!
//! Control is held constant over each stage (zero-order hold). A stage is
//! integrated with `substeps_per_stage` classical RK4 steps; after every
//! substep the physically nonnegative components are floored at zero.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{stage_reward, Objective, ReactorModel};

/// Largest state dimension handled by the stack-buffered integrator.
pub const MAX_DIM: usize = 8;

/// Ordered state components of a reactor model.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for StateVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(v)
    }
}

impl From<&[f64]> for StateVector {
    fn from(v: &[f64]) -> Self {
        StateVector(v.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub substeps_per_stage: usize,
    pub stage_duration: f64,
}

impl IntegratorConfig {
    pub const DEFAULT_SUBSTEPS: usize = 20;

    pub fn new(substeps_per_stage: usize, stage_duration: f64) -> Result<Self> {
        if substeps_per_stage == 0 {
            return Err(Error::Config("substeps_per_stage must be >= 1".into()));
        }
        if !(stage_duration > 0.0) || !stage_duration.is_finite() {
            return Err(Error::Config(format!(
                "stage_duration must be positive, got {stage_duration}"
            )));
        }
        Ok(IntegratorConfig {
            substeps_per_stage,
            stage_duration,
        })
    }

    /// Integrator matching the model's stage length.
    pub fn for_model(model: &dyn ReactorModel, substeps_per_stage: usize) -> Result<Self> {
        Self::new(substeps_per_stage, model.stage_duration())
    }

    pub fn substep(&self) -> f64 {
        self.stage_duration / self.substeps_per_stage as f64
    }
}

/// One classical fourth-order Runge–Kutta step of `dt` under constant `action`.
pub fn rk4_step<F>(state: &[f64], action: f64, dt: f64, derivs: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], f64, &mut [f64]) -> Result<()>,
{
    let mut out = vec![0.0; state.len()];
    rk4_step_into(state, action, dt, &derivs, &mut out)?;
    Ok(out)
}

fn rk4_step_into<F>(state: &[f64], action: f64, dt: f64, derivs: &F, out: &mut [f64]) -> Result<()>
where
    F: Fn(&[f64], f64, &mut [f64]) -> Result<()> + ?Sized,
{
    let n = state.len();
    if n > MAX_DIM {
        return Err(Error::Dimension {
            expected: MAX_DIM,
            got: n,
        });
    }
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];

    let eval = |x: &[f64], k: &mut [f64]| -> Result<()> {
        derivs(x, action, k)?;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                state: x.to_vec(),
                action,
            });
        }
        Ok(())
    };

    eval(state, &mut k1[..n])?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k1[i];
    }
    eval(&tmp[..n], &mut k2[..n])?;
    for i in 0..n {
        tmp[i] = state[i] + 0.5 * dt * k2[i];
    }
    eval(&tmp[..n], &mut k3[..n])?;
    for i in 0..n {
        tmp[i] = state[i] + dt * k3[i];
    }
    eval(&tmp[..n], &mut k4[..n])?;
    for i in 0..n {
        out[i] = state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Constraint caps touched during a stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintFlags {
    pub volume_cap: bool,
    pub safety_cap: bool,
}

impl ConstraintFlags {
    pub fn merge(self, other: ConstraintFlags) -> ConstraintFlags {
        ConstraintFlags {
            volume_cap: self.volume_cap || other.volume_cap,
            safety_cap: self.safety_cap || other.safety_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub next_state: StateVector,
    pub stage_reward: f64,
    pub clamp_count: usize,
    pub constraint_active: ConstraintFlags,
    /// Minimum-time models: the target was reached during (or before) this stage.
    pub terminal: bool,
    /// Time into the stage at which the target was first crossed.
    pub crossing_offset: Option<f64>,
}

/// Integrates one stage of the model under a held action.
///
/// The action must already be feasible (see [`ReactorModel::project_action`]).
/// The stage reward is accumulated substep by substep so that a
/// minimum-time target crossing is located to within one substep and then
/// interpolated linearly.
pub fn simulate_stage(
    model: &dyn ReactorModel,
    state: &[f64],
    action: f64,
    config: &IntegratorConfig,
) -> Result<StageResult> {
    let n = model.dim();
    if state.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: state.len(),
        });
    }
    let h = config.substep();
    let derivs = |x: &[f64], u: f64, out: &mut [f64]| model.derivs(x, u, out);

    let mut current = [0.0; MAX_DIM];
    let mut next = [0.0; MAX_DIM];
    current[..n].copy_from_slice(state);

    let mut reward = 0.0;
    let mut clamps = 0usize;
    let mut flags = model.constraint_flags(state);
    let mut crossing = None;
    let already_terminal = model.is_terminal(state);

    for step in 0..config.substeps_per_stage {
        rk4_step_into(&current[..n], action, h, &derivs, &mut next[..n])?;
        for (i, v) in next[..n].iter_mut().enumerate() {
            if *v < 0.0 && model.is_nonnegative(i) {
                *v = 0.0;
                clamps += 1;
            }
        }
        let r = stage_reward(model, &current[..n], &next[..n], h);
        reward += r;
        if !already_terminal && crossing.is_none() && model.is_terminal(&next[..n]) {
            // r = -(fraction of the substep elapsed before crossing)
            crossing = Some(step as f64 * h - r);
        }
        flags = flags.merge(model.constraint_flags(&next[..n]));
        current[..n].copy_from_slice(&next[..n]);
    }

    Ok(StageResult {
        next_state: StateVector::from(&current[..n]),
        stage_reward: reward,
        clamp_count: clamps,
        constraint_active: flags,
        terminal: already_terminal || crossing.is_some(),
        crossing_offset: crossing,
    })
}

/// Source of stage actions for a rollout.
pub trait Controller {
    /// Requested (unprojected) action at the start of `stage` in `state`.
    fn request(&self, stage: usize, state: &[f64]) -> f64;
}

impl<C: Controller + ?Sized> Controller for &C {
    fn request(&self, stage: usize, state: &[f64]) -> f64 {
        (**self).request(stage, state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Applied (projected) action per stage.
    pub actions: Vec<f64>,
    pub stage_rewards: Vec<f64>,
    pub objective: f64,
    /// Minimum-time models: time at which the target was reached.
    pub completion_time: Option<f64>,
    pub clamp_count: usize,
    /// Requests that fell outside the action bounds and were clipped.
    pub out_of_bounds_requests: usize,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn n_stages(&self) -> usize {
        self.actions.len()
    }

    /// The reported scalar: final yield, or completion time (falling back to
    /// the elapsed horizon when the target was never reached).
    pub fn final_metric(&self, model: &dyn ReactorModel) -> f64 {
        match model.objective() {
            Objective::TerminalYield => self.objective,
            Objective::MinimumTime { .. } => -self.objective,
        }
    }
}

/// Runs `n_stages` stages under `controller`, projecting every requested
/// action into the feasible set first.
///
/// Minimum-time rollouts stop at the stage in which the target is reached;
/// their objective is minus the completion time. Terminal-yield rollouts
/// report the yield of the final state.
pub fn rollout(
    model: &dyn ReactorModel,
    controller: &dyn Controller,
    initial_state: &[f64],
    config: &IntegratorConfig,
    n_stages: usize,
) -> Result<Trajectory> {
    model.validate_state(initial_state)?;
    let (lo, hi) = model.action_bounds();
    let dt = config.stage_duration;

    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![StateVector::from(initial_state)],
        actions: Vec::with_capacity(n_stages),
        stage_rewards: Vec::with_capacity(n_stages),
        objective: 0.0,
        completion_time: None,
        clamp_count: 0,
        out_of_bounds_requests: 0,
        warnings: Vec::new(),
    };

    let min_time = matches!(model.objective(), Objective::MinimumTime { .. });
    if min_time && model.is_terminal(initial_state) {
        traj.completion_time = Some(0.0);
        return Ok(traj);
    }

    let mut state = StateVector::from(initial_state);
    for stage in 0..n_stages {
        let requested = controller.request(stage, &state);
        let clipped = if requested.is_nan() {
            traj.warnings
                .push(format!("stage {stage}: controller returned NaN, using lower bound"));
            lo
        } else {
            requested.clamp(lo, hi)
        };
        if clipped != requested && !requested.is_nan() {
            traj.out_of_bounds_requests += 1;
        }
        let action = model.project_action(&state, clipped, config)?;
        let res = simulate_stage(model, &state, action, config)?;
        let t0 = stage as f64 * dt;

        traj.actions.push(action);
        traj.stage_rewards.push(res.stage_reward);
        traj.times.push(t0 + dt);
        traj.clamp_count += res.clamp_count;
        state = res.next_state;
        traj.states.push(state.clone());

        if min_time {
            if let Some(offset) = res.crossing_offset {
                traj.completion_time = Some(t0 + offset);
                break;
            }
        }
    }
    if traj.out_of_bounds_requests > 0 {
        traj.warnings.push(format!(
            "{} controller requests outside [{lo}, {hi}] were clipped",
            traj.out_of_bounds_requests
        ));
    }

    traj.objective = match model.objective() {
        Objective::TerminalYield => model.performance(traj.final_state()),
        Objective::MinimumTime { .. } => traj.stage_rewards.iter().sum(),
    };
    Ok(traj)
}
