//! Two-phase sample generation.
//!
//! Phase one runs `n_episodes` random episodes from random initial states
//! and records the state at the start of every stage. Phase two pairs every
//! recorded state with every grid action and simulates one stage, giving the
//! m × k transition cube the learner bootstraps from.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate_stage, IntegratorConfig, StateVector};
use crate::error::{Error, Result};
use crate::models::ReactorModel;
use crate::output::{Cell, Table};

/// Initial-state draws attempted before a region is declared infeasible.
const MAX_INIT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_episodes: usize,
    pub n_stages: usize,
    pub seed: u64,
    /// `[lo, hi]` per state component.
    pub init_region: Vec<[f64; 2]>,
    pub action_grid: Vec<f64>,
}

impl SamplingConfig {
    /// 40 episodes spanning the model's full stage count.
    pub fn for_model(model: &dyn ReactorModel, seed: u64) -> Self {
        SamplingConfig {
            n_episodes: 40,
            n_stages: model.n_stages(),
            seed,
            init_region: model
                .default_init_region()
                .into_iter()
                .map(|(lo, hi)| [lo, hi])
                .collect(),
            action_grid: model.default_action_grid(),
        }
    }

    /// Total number of state samples, `n_episodes * n_stages`.
    pub fn n_samples(&self) -> usize {
        self.n_episodes * self.n_stages
    }

    pub fn validate(&self, model: &dyn ReactorModel) -> Result<()> {
        if self.n_episodes == 0 || self.n_stages == 0 {
            return Err(Error::Config(
                "sampling: n_episodes and n_stages must be >= 1".into(),
            ));
        }
        if self.action_grid.len() < 2 {
            return Err(Error::Config("sampling: action grid needs at least 2 values".into()));
        }
        if self.action_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sampling: action grid must be strictly increasing".into()));
        }
        let (lo, hi) = model.action_bounds();
        if self.action_grid[0] < lo || *self.action_grid.last().unwrap() > hi {
            return Err(Error::Config(format!(
                "sampling: action grid leaves the model bounds [{lo}, {hi}]"
            )));
        }
        if self.init_region.len() != model.dim() {
            return Err(Error::Config(format!(
                "sampling: init_region has {} intervals, model has {} components",
                self.init_region.len(),
                model.dim()
            )));
        }
        if let Some([a, b]) = self.init_region.iter().find(|[a, b]| !(a <= b)) {
            return Err(Error::Config(format!("sampling: empty interval [{a}, {b}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSampleSet {
    pub rows: Vec<StateVector>,
    /// `(episode, stage)` of each row.
    pub provenance: Vec<(usize, usize)>,
}

impl StateSampleSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stage(&self, i: usize) -> usize {
        self.provenance[i].1
    }

    pub fn to_table(&self, model: &dyn ReactorModel) -> Table {
        let mut headers = vec!["episode".to_string(), "stage".to_string()];
        headers.extend(model.component_names().iter().map(|s| s.to_string()));
        let rows = self
            .rows
            .iter()
            .zip(&self.provenance)
            .map(|(x, (e, s))| {
                let mut row = vec![Cell::Int(*e as i64), Cell::Int(*s as i64)];
                row.extend(x.iter().map(|v| Cell::Num(*v)));
                row
            })
            .collect();
        Table { headers, rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubeEntry {
    pub next_state: StateVector,
    pub reward: f64,
    /// The successor is absorbing (minimum-time target reached).
    pub terminal: bool,
    /// Grid action after feasibility projection.
    pub applied_action: f64,
}

/// The m × k table of one-stage outcomes, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCube {
    pub n_rows: usize,
    pub action_grid: Vec<f64>,
    pub entries: Vec<CubeEntry>,
}

impl TransitionCube {
    pub fn n_actions(&self) -> usize {
        self.action_grid.len()
    }

    pub fn entry(&self, row: usize, action: usize) -> &CubeEntry {
        &self.entries[row * self.action_grid.len() + action]
    }

    pub fn row(&self, row: usize) -> &[CubeEntry] {
        let k = self.action_grid.len();
        &self.entries[row * k..(row + 1) * k]
    }

    pub fn to_table(&self, model: &dyn ReactorModel) -> Table {
        let mut headers: Vec<String> = ["row", "action_index", "action", "applied_action"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        headers.extend(model.component_names().iter().map(|s| format!("next_{s}")));
        headers.push("reward".into());
        headers.push("terminal".into());
        let k = self.n_actions();
        let rows = self
            .entries
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                let (i, j) = (idx / k, idx % k);
                let mut row = vec![
                    Cell::Int(i as i64),
                    Cell::Int(j as i64),
                    Cell::Num(self.action_grid[j]),
                    Cell::Num(e.applied_action),
                ];
                row.extend(e.next_state.iter().map(|v| Cell::Num(*v)));
                row.push(Cell::Num(e.reward));
                row.push(Cell::Int(e.terminal as i64));
                row
            })
            .collect();
        Table { headers, rows }
    }
}

/// RNG for one episode; independent of how episodes are scheduled.
pub fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Uniform draw from the box, rejected until it satisfies the model's state
/// invariants.
pub fn draw_initial_state(
    model: &dyn ReactorModel,
    region: &[[f64; 2]],
    rng: &mut impl Rng,
) -> Result<StateVector> {
    for _ in 0..MAX_INIT_ATTEMPTS {
        let x: Vec<f64> = region
            .iter()
            .map(|&[lo, hi]| if lo < hi { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        if model.validate_state(&x).is_ok() {
            return Ok(StateVector::new(x));
        }
    }
    Err(Error::Config(format!(
        "sampling: init_region {region:?} yields no state satisfying the {} invariants",
        model.name()
    )))
}

pub fn generate_state_samples(
    model: &dyn ReactorModel,
    config: &SamplingConfig,
    integrator: &IntegratorConfig,
) -> Result<StateSampleSet> {
    config.validate(model)?;
    let k = config.action_grid.len();
    let episodes: Vec<Vec<StateVector>> = (0..config.n_episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = episode_rng(config.seed, e);
            let mut state = draw_initial_state(model, &config.init_region, &mut rng)?;
            let mut rows = Vec::with_capacity(config.n_stages);
            for stage in 0..config.n_stages {
                rows.push(state.clone());
                if stage + 1 < config.n_stages {
                    let a = config.action_grid[rng.gen_range(0..k)];
                    let u = model.project_action(&state, a, integrator)?;
                    state = simulate_stage(model, &state, u, integrator)?.next_state;
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut set = StateSampleSet {
        rows: Vec::with_capacity(config.n_samples()),
        provenance: Vec::with_capacity(config.n_samples()),
    };
    for (e, rows) in episodes.into_iter().enumerate() {
        for (s, x) in rows.into_iter().enumerate() {
            set.rows.push(x);
            set.provenance.push((e, s));
        }
    }
    Ok(set)
}

pub fn build_transition_cube(
    model: &dyn ReactorModel,
    samples: &StateSampleSet,
    action_grid: &[f64],
    integrator: &IntegratorConfig,
) -> Result<TransitionCube> {
    if samples.is_empty() {
        return Err(Error::Config("transition cube needs at least one sample".into()));
    }
    let rows: Vec<Vec<CubeEntry>> = samples
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            action_grid
                .iter()
                .enumerate()
                .map(|(j, &a)| {
                    let wrap = |e: Error| Error::CubeEntry {
                        row: i,
                        action: j,
                        source: Box::new(e),
                    };
                    let u = model.project_action(x, a, integrator).map_err(wrap)?;
                    let res = simulate_stage(model, x, u, integrator).map_err(wrap)?;
                    Ok(CubeEntry {
                        next_state: res.next_state,
                        reward: res.stage_reward,
                        terminal: res.terminal,
                        applied_action: u,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(TransitionCube {
        n_rows: samples.len(),
        action_grid: action_grid.to_vec(),
        entries: rows.into_iter().flatten().collect(),
    })
}
