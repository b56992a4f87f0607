//! Actuator-failure scenarios and the three ways of carrying on afterwards.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::Schedule;
use crate::dynamics::{rollout, Controller, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::models::ReactorModel;
use crate::output::{Cell, Table};

/// The action is forced to `forced_value` on `[t_start, t_end]`, with both
/// edges snapped to the nearest stage boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub t_start: f64,
    pub t_end: f64,
    pub forced_value: f64,
}

impl Disturbance {
    /// Stage range `[first, end)` covered by the window.
    pub fn stage_window(&self, stage_duration: f64, n_stages: usize) -> Result<(usize, usize)> {
        let horizon = stage_duration * n_stages as f64;
        let ok = self.t_start.is_finite()
            && self.t_end.is_finite()
            && 0.0 <= self.t_start
            && self.t_start <= self.t_end
            && self.t_end <= horizon * (1.0 + 1e-12);
        if !ok {
            return Err(Error::Config(format!(
                "disturbance window [{}, {}] must lie within [0, {horizon}]",
                self.t_start, self.t_end
            )));
        }
        let snap = |t: f64| ((t / stage_duration).round() as usize).min(n_stages);
        Ok((snap(self.t_start), snap(self.t_end)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterventionMode {
    /// Query the state-feedback policy after the window.
    Intelligent,
    /// Resume the original schedule after the window.
    NominalSchedule,
    /// Keep the forced value until the end.
    DoNothing,
}

impl InterventionMode {
    pub const ALL: [InterventionMode; 3] = [
        InterventionMode::Intelligent,
        InterventionMode::NominalSchedule,
        InterventionMode::DoNothing,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            InterventionMode::Intelligent => "intelligent",
            InterventionMode::NominalSchedule => "nominal-schedule",
            InterventionMode::DoNothing => "do-nothing",
        }
    }
}

struct ScenarioController<'a> {
    policy: &'a dyn Controller,
    nominal: &'a Schedule,
    window: (usize, usize),
    forced: f64,
    mode: InterventionMode,
}

impl Controller for ScenarioController<'_> {
    fn request(&self, stage: usize, state: &[f64]) -> f64 {
        let (first, end) = self.window;
        if stage < first {
            return self.nominal.request(stage, state);
        }
        if stage < end {
            return self.forced;
        }
        match self.mode {
            InterventionMode::Intelligent => self.policy.request(stage, state),
            InterventionMode::NominalSchedule => self.nominal.request(stage, state),
            InterventionMode::DoNothing => self.forced,
        }
    }
}

/// Closed-loop run from the model's initial state under one disturbance
/// and intervention mode. Every request, forced ones included, goes
/// through the model's feasibility projection.
pub fn run_scenario(
    model: &dyn ReactorModel,
    policy: &dyn Controller,
    nominal: &Schedule,
    disturbance: &Disturbance,
    mode: InterventionMode,
    integrator: &IntegratorConfig,
) -> Result<Trajectory> {
    let n = model.n_stages();
    let window = disturbance.stage_window(integrator.stage_duration, n)?;
    if nominal.actions.is_empty() {
        return Err(Error::Config("nominal schedule is empty".into()));
    }
    let controller = ScenarioController {
        policy,
        nominal,
        window,
        forced: disturbance.forced_value,
        mode,
    };
    rollout(model, &controller, &model.initial_state(), integrator, n)
}

/// The applied actions of the undisturbed closed-loop run, as a schedule.
/// Minimum-time runs that finish early are padded by holding the last action.
pub fn nominal_schedule(
    model: &dyn ReactorModel,
    policy: &dyn Controller,
    integrator: &IntegratorConfig,
) -> Result<Schedule> {
    let t = rollout(model, policy, &model.initial_state(), integrator, model.n_stages())?;
    let mut actions = t.actions.clone();
    let last = match actions.last() {
        Some(a) => *a,
        None => return Err(Error::Config("nominal run applied no actions".into())),
    };
    actions.resize(model.n_stages(), last);
    Ok(Schedule {
        actions,
        objective: t.objective,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeOutcome {
    pub mode: InterventionMode,
    pub trajectory: Trajectory,
    /// Final yield, or completion time for minimum-time models.
    pub final_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    pub disturbance: Disturbance,
    pub window_stages: (usize, usize),
    /// In `InterventionMode::ALL` order.
    pub outcomes: Vec<ModeOutcome>,
    /// Modes from best to worst; equal objectives keep `ALL` order.
    pub ranking: Vec<InterventionMode>,
    pub config_hash: String,
}

impl ScenarioReport {
    pub fn outcome(&self, mode: InterventionMode) -> &ModeOutcome {
        self.outcomes
            .iter()
            .find(|o| o.mode == mode)
            .expect("report holds every mode")
    }

    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(&["mode", "final_metric", "rank", "config_hash"]);
        for o in &self.outcomes {
            let rank = self.ranking.iter().position(|m| *m == o.mode).unwrap_or(0) + 1;
            t.push(vec![
                o.mode.label().into(),
                Cell::Num(o.final_metric),
                Cell::Int(rank as i64),
                Cell::Text(self.config_hash.clone()),
            ]);
        }
        t
    }
}

/// Runs all three modes under the same disturbance.
pub fn compare_modes(
    model: &dyn ReactorModel,
    policy: &(dyn Controller + Sync),
    nominal: &Schedule,
    disturbance: &Disturbance,
    integrator: &IntegratorConfig,
    config_hash: &str,
) -> Result<ScenarioReport> {
    let window_stages = disturbance.stage_window(integrator.stage_duration, model.n_stages())?;
    let outcomes: Vec<ModeOutcome> = InterventionMode::ALL
        .par_iter()
        .map(|&mode| {
            let trajectory = run_scenario(model, policy, nominal, disturbance, mode, integrator)?;
            Ok(ModeOutcome {
                mode,
                final_metric: trajectory.final_metric(model),
                trajectory,
            })
        })
        .collect::<Result<_>>()?;
    // objectives are maximized for both yield and minimum-time models
    let mut ranking: Vec<(usize, f64)> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| (i, o.trajectory.objective))
        .collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ScenarioReport {
        disturbance: disturbance.clone(),
        window_stages,
        ranking: ranking.iter().map(|(i, _)| outcomes[*i].mode).collect(),
        outcomes,
        config_hash: config_hash.to_string(),
    })
}
