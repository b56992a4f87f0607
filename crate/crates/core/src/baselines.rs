//! Open-loop comparison methods over stage-constant schedules: iterative
//! dynamic programming with region contraction, and a direct Nelder–Mead
//! search (`cvp-direct`).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rollout, Controller, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::models::ReactorModel;
use crate::output::{Cell, Table};

/// One action per stage. Stages past the end hold the last action.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub actions: Vec<f64>,
    pub objective: f64,
}

impl Schedule {
    pub fn constant(value: f64, n_stages: usize) -> Self {
        Schedule {
            actions: vec![value; n_stages],
            objective: f64::NAN,
        }
    }

    pub fn from_actions(actions: Vec<f64>) -> Self {
        Schedule {
            actions,
            objective: f64::NAN,
        }
    }

    pub fn to_table(&self) -> Table {
        Table {
            headers: vec!["stage".into(), "action".into()],
            rows: self
                .actions
                .iter()
                .enumerate()
                .map(|(i, a)| vec![Cell::Int(i as i64), Cell::Num(*a)])
                .collect(),
        }
    }
}

impl Controller for Schedule {
    fn request(&self, stage: usize, _state: &[f64]) -> f64 {
        match self.actions.get(stage) {
            Some(a) => *a,
            None => self.actions.last().copied().unwrap_or(f64::NAN),
        }
    }
}

pub fn schedule_rollout(
    model: &dyn ReactorModel,
    schedule: &Schedule,
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    rollout(
        model,
        schedule,
        &model.initial_state(),
        config,
        schedule.actions.len(),
    )
}

/// Open-loop objective: final yield, or minus the completion time.
pub fn evaluate_schedule(
    model: &dyn ReactorModel,
    schedule: &Schedule,
    config: &IntegratorConfig,
) -> Result<f64> {
    if schedule.actions.len() != model.n_stages() {
        return Err(Error::Dimension {
            expected: model.n_stages(),
            got: schedule.actions.len(),
        });
    }
    Ok(schedule_rollout(model, schedule, config)?.objective)
}

fn evaluate_all(
    model: &dyn ReactorModel,
    candidates: &[Vec<f64>],
    config: &IntegratorConfig,
) -> Result<Vec<f64>> {
    candidates
        .par_iter()
        .map(|a| evaluate_schedule(model, &Schedule::from_actions(a.clone()), config))
        .collect()
}

/// Best schedule holding a single grid value for the whole horizon; ties go
/// to the lowest value.
pub fn best_constant_schedule(
    model: &dyn ReactorModel,
    grid: &[f64],
    config: &IntegratorConfig,
) -> Result<Schedule> {
    let n = model.n_stages();
    let candidates: Vec<Vec<f64>> = grid.iter().map(|&g| vec![g; n]).collect();
    let values = evaluate_all(model, &candidates, config)?;
    let best = crate::fqi::argmax_lowest(&values, grid);
    Ok(Schedule {
        actions: candidates[best].clone(),
        objective: values[best],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdpConfig {
    pub candidates_per_stage: usize,
    pub passes: usize,
    pub contraction: f64,
    pub seed: u64,
}

impl Default for IdpConfig {
    fn default() -> Self {
        IdpConfig {
            candidates_per_stage: 15,
            passes: 20,
            contraction: 0.85,
            seed: 0,
        }
    }
}

impl IdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates_per_stage < 2 {
            return Err(Error::Config("idp: candidates_per_stage must be >= 2".into()));
        }
        if !(self.contraction > 0.0 && self.contraction < 1.0) {
            return Err(Error::Config("idp: contraction must lie in (0, 1)".into()));
        }
        if self.passes == 0 {
            return Err(Error::Config("idp: passes must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub schedule: Schedule,
    /// Incumbent objective after each pass or restart.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

impl OptimizerResult {
    pub fn trace_table(&self, label: &str) -> Table {
        Table {
            headers: vec![label.into(), "objective".into()],
            rows: self
                .trace
                .iter()
                .enumerate()
                .map(|(i, v)| vec![Cell::Int(i as i64), Cell::Num(*v)])
                .collect(),
        }
    }
}

/// Backward-sweep region-contraction search starting from the best
/// constant schedule. Pass 0 tries evenly spaced values over the full range
/// at every stage; later passes sample
/// uniformly in a window around the incumbent whose width shrinks by
/// `contraction` each pass. A candidate replaces the incumbent only on
/// strict improvement, so the trace is non-decreasing.
pub fn idp_optimize(
    model: &dyn ReactorModel,
    config: &IdpConfig,
    integrator: &IntegratorConfig,
) -> Result<OptimizerResult> {
    config.validate()?;
    let (lo, hi) = model.action_bounds();
    let n = model.n_stages();
    let r = config.candidates_per_stage;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let levels: Vec<f64> = (0..r)
        .map(|i| lo + (hi - lo) * i as f64 / (r - 1) as f64)
        .collect();
    // start from the best constant schedule over the pass-0 levels
    let constants: Vec<Vec<f64>> = levels.iter().map(|&v| vec![v; n]).collect();
    let objs = evaluate_all(model, &constants, integrator)?;
    let start = crate::fqi::argmax_lowest(&objs, &levels);
    let mut incumbent = constants[start].clone();
    let mut best = objs[start];
    let mut evaluations = objs.len();
    let mut trace = Vec::with_capacity(config.passes);
    let mut width = hi - lo;

    for pass in 0..config.passes {
        for stage in (0..n).rev() {
            let values: Vec<f64> = if pass == 0 {
                levels.clone()
            } else {
                let c = incumbent[stage];
                (0..r)
                    .map(|_| (c + width * (rng.gen::<f64>() - 0.5)).clamp(lo, hi))
                    .collect()
            };
            let candidates: Vec<Vec<f64>> = values
                .iter()
                .map(|&v| {
                    let mut s = incumbent.clone();
                    s[stage] = v;
                    s
                })
                .collect();
            let objs = evaluate_all(model, &candidates, integrator)?;
            evaluations += objs.len();
            for (v, o) in values.iter().zip(&objs) {
                if *o > best {
                    best = *o;
                    incumbent[stage] = *v;
                }
            }
        }
        trace.push(best);
        width *= config.contraction;
    }
    Ok(OptimizerResult {
        schedule: Schedule {
            actions: incumbent,
            objective: best,
        },
        trace,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvpConfig {
    pub restarts: usize,
    pub tolerance: f64,
    pub max_evaluations: usize,
    pub seed: u64,
}

impl Default for CvpConfig {
    fn default() -> Self {
        CvpConfig {
            restarts: 5,
            tolerance: 1e-8,
            max_evaluations: 5000,
            seed: 0,
        }
    }
}

impl CvpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("cvp: restarts must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) || self.max_evaluations == 0 {
            return Err(Error::Config(
                "cvp: tolerance and max_evaluations must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Maximizes `f` over `[0, 1]^n` with Nelder–Mead; points are clipped into
/// the box before every evaluation. Returns the best point (clipped) and
/// its value together with the evaluation count.
pub fn nelder_mead_unit_box(
    f: &dyn Fn(&[f64]) -> Result<f64>,
    start: &[f64],
    step: f64,
    tolerance: f64,
    max_evaluations: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = start.len();
    let clip = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let evals = std::cell::Cell::new(0usize);
    // minimize -f
    let cost = |x: &[f64]| -> Result<f64> {
        evals.set(evals.get() + 1);
        Ok(-f(&clip(x))?)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(clip(start));
    for i in 0..n {
        let mut v = simplex[0].clone();
        v[i] = if v[i] + step <= 1.0 { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values = Vec::with_capacity(n + 1);
    for v in &simplex {
        values.push(cost(v)?);
    }

    while evals.get() < max_evaluations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread <= tolerance && diameter <= tolerance.sqrt() {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|v| v[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-1.0);
        let fr = cost(&xr)?;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = cost(&xe)?;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = along(-0.5);
                let fx = cost(&x)?;
                (x, fx)
            } else {
                let x = along(0.5);
                let fx = cost(&x)?;
                (x, fx)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    let shrunk: Vec<f64> = simplex[i]
                        .iter()
                        .zip(&simplex[0])
                        .map(|(v, b)| b + 0.5 * (v - b))
                        .collect();
                    values[i] = cost(&shrunk)?;
                    simplex[i] = shrunk;
                }
            }
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("simplex is non-empty");
    Ok((clip(&simplex[best]), -values[best], evals.get()))
}

/// Multi-restart Nelder–Mead over box-constrained parameters `[lo, hi]^n`.
/// Restart 0 starts at the box centre, later restarts at seeded uniform
/// draws. The best result over all restarts is returned.
pub fn cvp_maximize(
    f: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    n: usize,
    bounds: (f64, f64),
    config: &CvpConfig,
) -> Result<(Vec<f64>, f64, Vec<f64>, usize)> {
    config.validate()?;
    let (lo, hi) = bounds;
    let to_box = |z: &[f64]| -> Vec<f64> { z.iter().map(|v| lo + v * (hi - lo)).collect() };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.restarts)
        .map(|k| {
            if k == 0 {
                vec![0.5; n]
            } else {
                (0..n).map(|_| rng.gen::<f64>()).collect()
            }
        })
        .collect();
    let runs: Vec<(Vec<f64>, f64, usize)> = starts
        .par_iter()
        .map(|s| {
            let g = |z: &[f64]| f(&to_box(z));
            nelder_mead_unit_box(&g, s, 0.25, config.tolerance, config.max_evaluations)
        })
        .collect::<Result<_>>()?;

    let mut best_idx = 0;
    let mut trace = Vec::with_capacity(runs.len());
    let mut evaluations = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.1 > runs[best_idx].1 {
            best_idx = i;
        }
        trace.push(runs[best_idx].1);
        evaluations += r.2;
    }
    let (z, value, _) = &runs[best_idx];
    Ok((to_box(z), *value, trace, evaluations))
}

/// Direct search over stage-constant schedules (`cvp-direct`).
pub fn cvp_optimize(
    model: &dyn ReactorModel,
    config: &CvpConfig,
    integrator: &IntegratorConfig,
) -> Result<OptimizerResult> {
    let n = model.n_stages();
    let f = |u: &[f64]| evaluate_schedule(model, &Schedule::from_actions(u.to_vec()), integrator);
    let (actions, objective, trace, evaluations) =
        cvp_maximize(&f, n, model.action_bounds(), config)?;
    Ok(OptimizerResult {
        schedule: Schedule { actions, objective },
        trace,
        evaluations,
    })
}
