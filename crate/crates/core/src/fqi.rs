//! Fitted Q-iteration over a fixed transition cube.
//!
//! Every round recomputes the one-step lookahead targets
//! `r(i, j) + max_a' Q(next(i, j), a')` for all m × k cube entries and
//! refits the Q regressor on them. The first round has no model yet and
//! bootstraps nothing. After the last round, every sampled state is
//! labelled with the grid action maximizing the same lookahead target and
//! a policy regressor is fitted from states to those labels.
//!
//! Three input encodings are supported. `Stationary` feeds the raw state to
//! a single regressor. `FiniteHorizon` appends a one-hot encoding of the
//! stage index. `PerStage` fits an independent regressor for every stage.
//! Both horizon-aware modes stop bootstrapping past the last stage.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximator::{Approximator, ApproximatorKind};
use crate::dynamics::{Controller, IntegratorConfig};
use crate::error::{Error, Result};
use crate::models::ReactorModel;
use crate::output::{Cell, Table};
use crate::sampling::{
    build_transition_cube, generate_state_samples, SamplingConfig, StateSampleSet, TransitionCube,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineMode {
    Stationary,
    FiniteHorizon,
    PerStage,
}

/// Backups are undiscounted and ties between grid actions go to the lowest
/// action value; neither is configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub n_iterations: usize,
    pub mode: EngineMode,
    /// Regressor for the Q-function.
    pub approximator: ApproximatorKind,
    /// Regressor for the extracted policy.
    pub policy_approximator: ApproximatorKind,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_iterations: 30,
            mode: EngineMode::FiniteHorizon,
            approximator: ApproximatorKind::default(),
            policy_approximator: ApproximatorKind::default(),
        }
    }
}

impl EngineConfig {
    /// Per-model defaults. Ridge strengths differ because the sampled
    /// states of the fed reactors lie far from their optimal paths, where
    /// heavier shrinkage extrapolates better.
    pub fn for_model(model: &dyn ReactorModel) -> Self {
        let (q, p) = match model.name() {
            "fed-batch" => (300.0, 10.0),
            "semi-batch" => (300.0, 1.0),
            _ => (1e-3, 1e-3),
        };
        EngineConfig {
            approximator: ApproximatorKind::Poly2 { lambda: q },
            policy_approximator: ApproximatorKind::Poly2 { lambda: p },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::Config("engine: n_iterations must be >= 1".into()));
        }
        for kind in [self.approximator, self.policy_approximator] {
            if let ApproximatorKind::Poly2 { lambda } = kind {
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::Config("engine: lambda must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// How (state, stage, action) triples become regressor inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputEncoding {
    pub mode: EngineMode,
    /// Stages in the learning horizon; stage indices are one-hot encoded
    /// over `0..horizon` in finite-horizon mode.
    pub horizon: usize,
}

impl InputEncoding {
    pub fn state_dim(&self, state_len: usize) -> usize {
        match self.mode {
            EngineMode::Stationary | EngineMode::PerStage => state_len,
            EngineMode::FiniteHorizon => state_len + self.horizon,
        }
    }

    pub fn n_slots(&self) -> usize {
        match self.mode {
            EngineMode::PerStage => self.horizon,
            _ => 1,
        }
    }

    /// Which regressor serves `stage`.
    pub fn slot(&self, stage: usize) -> usize {
        match self.mode {
            EngineMode::PerStage => stage.min(self.horizon - 1),
            _ => 0,
        }
    }

    pub fn state_input(&self, state: &[f64], stage: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.state_dim(state.len()) + 1);
        v.extend_from_slice(state);
        if self.mode == EngineMode::FiniteHorizon {
            let s = stage.min(self.horizon.saturating_sub(1));
            v.extend((0..self.horizon).map(|k| if k == s { 1.0 } else { 0.0 }));
        }
        v
    }

    pub fn q_input(&self, state: &[f64], stage: usize, action: f64) -> Vec<f64> {
        let mut v = self.state_input(state, stage);
        v.push(action);
        v
    }

    /// Whether a successor entered at `next_stage` carries a continuation value.
    pub fn bootstraps(&self, next_stage: usize) -> bool {
        match self.mode {
            EngineMode::Stationary => true,
            EngineMode::FiniteHorizon | EngineMode::PerStage => next_stage < self.horizon,
        }
    }
}

/// Index of the largest value; ties go to the smallest grid action.
pub fn argmax_lowest(values: &[f64], grid: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..values.len() {
        if values[j] > values[best] || (values[j] == values[best] && grid[j] < grid[best]) {
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    /// One regressor per slot of the encoding.
    pub regressors: Vec<Approximator>,
    pub action_grid: Vec<f64>,
    pub encoding: InputEncoding,
}

impl QModel {
    fn regressor(&self, stage: usize) -> &Approximator {
        &self.regressors[self.encoding.slot(stage)]
    }

    pub fn value(&self, state: &[f64], stage: usize, action: f64) -> f64 {
        self.regressor(stage)
            .predict_unchecked(&self.encoding.q_input(state, stage, action))
    }

    fn values(&self, state: &[f64], stage: usize) -> Vec<f64> {
        let mut input = self.encoding.q_input(state, stage, 0.0);
        let last = input.len() - 1;
        let regressor = self.regressor(stage);
        self.action_grid
            .iter()
            .map(|&a| {
                input[last] = a;
                regressor.predict_unchecked(&input)
            })
            .collect()
    }

    /// `max_a Q(state, a)` over the action grid.
    pub fn best_value(&self, state: &[f64], stage: usize) -> f64 {
        self.values(state, stage)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid action maximizing Q; ties resolved toward the lowest action.
    pub fn greedy_action(&self, state: &[f64], stage: usize) -> f64 {
        let v = self.values(state, stage);
        self.action_grid[argmax_lowest(&v, &self.action_grid)]
    }
}

impl Controller for QModel {
    fn request(&self, stage: usize, state: &[f64]) -> f64 {
        self.greedy_action(state, stage)
    }
}

/// State-feedback policy fitted to the greedy labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub regressors: Vec<Approximator>,
    /// Output range, the extremes of the action grid.
    pub bounds: (f64, f64),
    pub encoding: InputEncoding,
}

impl PolicyModel {
    /// Regressor output before clipping.
    pub fn raw(&self, stage: usize, state: &[f64]) -> f64 {
        self.regressors[self.encoding.slot(stage)]
            .predict_unchecked(&self.encoding.state_input(state, stage))
    }

    pub fn action(&self, stage: usize, state: &[f64]) -> f64 {
        self.raw(stage, state).clamp(self.bounds.0, self.bounds.1)
    }
}

impl Controller for PolicyModel {
    // unclipped, so that rollouts can count out-of-range requests
    fn request(&self, stage: usize, state: &[f64]) -> f64 {
        self.raw(stage, state)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    /// Mean |target change| against the previous round (round 1: mean |target|).
    pub target_change: Vec<f64>,
    /// Mean |Q - backup(Q)| of the model fitted in each round.
    pub bellman_residual: Vec<f64>,
    pub fit_mse: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn final_residual(&self) -> Option<f64> {
        self.bellman_residual.last().copied()
    }

    pub fn to_table(&self) -> Table {
        Table {
            headers: vec![
                "iteration".into(),
                "target_change".into(),
                "bellman_residual".into(),
                "fit_mse".into(),
            ],
            rows: (0..self.target_change.len())
                .map(|i| {
                    vec![
                        Cell::Int(i as i64 + 1),
                        Cell::Num(self.target_change[i]),
                        Cell::Num(self.bellman_residual[i]),
                        Cell::Num(self.fit_mse[i]),
                    ]
                })
                .collect(),
        }
    }
}

fn check_consistent(samples: &StateSampleSet, cube: &TransitionCube) -> Result<()> {
    if cube.n_rows != samples.len() || cube.entries.len() != cube.n_rows * cube.n_actions() {
        return Err(Error::Dimension {
            expected: samples.len(),
            got: cube.n_rows,
        });
    }
    if cube.n_rows == 0 || cube.n_actions() == 0 {
        return Err(Error::Config("empty transition cube".into()));
    }
    Ok(())
}

/// Lookahead targets for every cube entry, row-major `m × k`.
pub fn q_backup_targets(
    samples: &StateSampleSet,
    cube: &TransitionCube,
    qmodel: Option<&QModel>,
    encoding: &InputEncoding,
) -> Vec<f64> {
    (0..cube.n_rows)
        .into_par_iter()
        .flat_map_iter(|i| {
            let next_stage = samples.stage(i) + 1;
            cube.row(i).iter().map(move |e| {
                let cont = match qmodel {
                    Some(q) if !e.terminal && encoding.bootstraps(next_stage) => {
                        q.best_value(&e.next_state, next_stage)
                    }
                    _ => 0.0,
                };
                e.reward + cont
            })
        })
        .collect()
}

/// Mean absolute Bellman error of `qmodel` over the cube.
pub fn bellman_residual(qmodel: &QModel, samples: &StateSampleSet, cube: &TransitionCube) -> f64 {
    let targets = q_backup_targets(samples, cube, Some(qmodel), &qmodel.encoding);
    let k = cube.n_actions();
    let total: f64 = targets
        .par_iter()
        .enumerate()
        .map(|(idx, t)| {
            let (i, j) = (idx / k, idx % k);
            (qmodel.value(&samples.rows[i], samples.stage(i), cube.action_grid[j]) - t).abs()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / targets.len() as f64
}

pub fn encoding_for(config: &EngineConfig, horizon: usize) -> InputEncoding {
    InputEncoding {
        mode: config.mode,
        horizon: horizon.max(1),
    }
}

/// Fits one regressor per encoding slot on the rows routed to it. Returns
/// the models, the pooled training MSE and any fallback warnings.
fn fit_slots(
    kind: ApproximatorKind,
    encoding: &InputEncoding,
    inputs: &[Vec<f64>],
    targets: &[f64],
    stages: &[usize],
) -> Result<(Vec<Approximator>, f64, Vec<String>)> {
    let n_slots = encoding.n_slots();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_slots];
    for (idx, &st) in stages.iter().enumerate() {
        groups[encoding.slot(st)].push(idx);
    }
    let fitted: Vec<_> = groups
        .par_iter()
        .enumerate()
        .map(|(slot, g)| {
            if g.is_empty() {
                return Err(Error::Config(format!("no samples for stage slot {slot}")));
            }
            let x: Vec<Vec<f64>> = g.iter().map(|&i| inputs[i].clone()).collect();
            let y: Vec<f64> = g.iter().map(|&i| targets[i]).collect();
            Approximator::fit(kind, &x, &y)
        })
        .collect::<Result<_>>()?;
    let mut models = Vec::with_capacity(n_slots);
    let mut sse = 0.0;
    let mut warnings = Vec::new();
    for ((model, report), g) in fitted.into_iter().zip(&groups) {
        sse += report.train_mse * g.len() as f64;
        if let Some(w) = report.warning {
            warnings.push(w);
        }
        models.push(model);
    }
    Ok((models, sse / targets.len() as f64, warnings))
}

/// Runs `n_iterations` rounds of backup + regression.
pub fn run_fqi(
    samples: &StateSampleSet,
    cube: &TransitionCube,
    config: &EngineConfig,
    encoding: InputEncoding,
) -> Result<(QModel, Diagnostics)> {
    config.validate()?;
    check_consistent(samples, cube)?;
    let k = cube.n_actions();
    let inputs: Vec<Vec<f64>> = (0..cube.n_rows * k)
        .map(|idx| {
            let (i, j) = (idx / k, idx % k);
            encoding.q_input(&samples.rows[i], samples.stage(i), cube.action_grid[j])
        })
        .collect();
    let stages: Vec<usize> = (0..cube.n_rows * k).map(|idx| samples.stage(idx / k)).collect();

    let mut diag = Diagnostics::default();
    let mut model: Option<QModel> = None;
    let mut previous: Option<Vec<f64>> = None;
    for iteration in 0..config.n_iterations {
        let targets = q_backup_targets(samples, cube, model.as_ref(), &encoding);
        let change = match &previous {
            Some(p) => p.iter().zip(&targets).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            None => targets.iter().map(|t| t.abs()).sum::<f64>(),
        } / targets.len() as f64;

        let (regressors, mse, warnings) =
            fit_slots(config.approximator, &encoding, &inputs, &targets, &stages).map_err(|e| {
                Error::Iteration {
                    iteration: iteration + 1,
                    source: Box::new(e),
                }
            })?;
        for w in warnings {
            diag.warnings.push(format!("iteration {}: {w}", iteration + 1));
        }
        let q = QModel {
            regressors,
            action_grid: cube.action_grid.clone(),
            encoding,
        };
        diag.target_change.push(change);
        diag.fit_mse.push(mse);
        diag.bellman_residual.push(bellman_residual(&q, samples, cube));
        model = Some(q);
        previous = Some(targets);
    }
    Ok((model.expect("n_iterations >= 1"), diag))
}

/// Greedy label per sampled state: the grid action maximizing the
/// lookahead target `r + max_a' Q(next, a')`.
pub fn greedy_labels(qmodel: &QModel, samples: &StateSampleSet, cube: &TransitionCube) -> Vec<f64> {
    let targets = q_backup_targets(samples, cube, Some(qmodel), &qmodel.encoding);
    let k = cube.n_actions();
    targets
        .chunks(k)
        .map(|row| cube.action_grid[argmax_lowest(row, &cube.action_grid)])
        .collect()
}

/// Labels every sample greedily and fits the policy regressor to them.
pub fn extract_policy(
    qmodel: &QModel,
    samples: &StateSampleSet,
    cube: &TransitionCube,
    approximator: ApproximatorKind,
) -> Result<(PolicyModel, Vec<f64>)> {
    check_consistent(samples, cube)?;
    let labels = greedy_labels(qmodel, samples, cube);
    let inputs: Vec<Vec<f64>> = samples
        .rows
        .iter()
        .enumerate()
        .map(|(i, x)| qmodel.encoding.state_input(x, samples.stage(i)))
        .collect();
    let stages: Vec<usize> = (0..samples.len()).map(|i| samples.stage(i)).collect();
    let (regressors, _, _) =
        fit_slots(approximator, &qmodel.encoding, &inputs, &labels, &stages)?;
    let grid = &cube.action_grid;
    let lo = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        PolicyModel {
            regressors,
            bounds: (lo, hi),
            encoding: qmodel.encoding,
        },
        labels,
    ))
}

/// Everything produced by one training run.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub samples: StateSampleSet,
    pub cube: TransitionCube,
    pub qmodel: QModel,
    pub policy: PolicyModel,
    pub labels: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Sampling, cube construction, Q-iteration and policy extraction.
pub fn train_agent(
    model: &dyn ReactorModel,
    sampling: &SamplingConfig,
    engine: &EngineConfig,
    integrator: &IntegratorConfig,
) -> Result<TrainedAgent> {
    let samples = generate_state_samples(model, sampling, integrator)?;
    let cube = build_transition_cube(model, &samples, &sampling.action_grid, integrator)?;
    let encoding = encoding_for(engine, sampling.n_stages);
    let (qmodel, diagnostics) = run_fqi(&samples, &cube, engine, encoding)?;
    let (policy, labels) = extract_policy(&qmodel, &samples, &cube, engine.policy_approximator)?;
    Ok(TrainedAgent {
        samples,
        cube,
        qmodel,
        policy,
        labels,
        diagnostics,
    })
}
