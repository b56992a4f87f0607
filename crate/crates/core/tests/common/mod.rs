//! Independent oracles shared by the integration tests and the acceptance
//! target. Nothing here calls into the code under test to produce an
//! expected value.

#![allow(dead_code)]

use batch_fqi::approximator::ApproximatorKind;
use batch_fqi::baselines::Schedule;
use batch_fqi::dynamics::{rollout, rk4_step, IntegratorConfig, StateVector, Trajectory};
use batch_fqi::fqi::{encoding_for, extract_policy, run_fqi, EngineConfig, EngineMode, TrainedAgent};
use batch_fqi::models::{BatchAbParams, FedBatchParams, ReactorConfig, ReactorModel, SemiBatchParams};
use batch_fqi::sampling::{draw_initial_state, CubeEntry, StateSampleSet, TransitionCube};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Deterministic finite MDPs

/// Time-varying deterministic MDP. `next[t][s][a]`, `reward[t][s][a]`.
#[derive(Debug, Clone)]
pub struct Mdp {
    pub n_states: usize,
    pub grid: Vec<f64>,
    pub horizon: usize,
    pub next: Vec<Vec<Vec<usize>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
}

impl Mdp {
    /// Rewards are half-integers half the time so that ties occur.
    pub fn random(n_states: usize, n_actions: usize, horizon: usize, rng: &mut impl Rng) -> Mdp {
        let mut grid: Vec<f64> = (0..n_actions).map(|a| a as f64 * 0.5 - 0.25).collect();
        grid.shuffle(rng);
        let coarse = rng.gen_bool(0.5);
        let mut r = || {
            if coarse {
                rng.gen_range(-4i32..=4) as f64 * 0.5
            } else {
                rng.gen_range(-1.0..1.0)
            }
        };
        let reward = (0..horizon)
            .map(|_| (0..n_states).map(|_| (0..n_actions).map(|_| r()).collect()).collect())
            .collect();
        let next = (0..horizon)
            .map(|_| {
                (0..n_states)
                    .map(|_| (0..n_actions).map(|_| rng.gen_range(0..n_states)).collect())
                    .collect()
            })
            .collect();
        Mdp {
            n_states,
            grid,
            horizon,
            next,
            reward,
        }
    }

    fn sequence_return(&self, mut s: usize, t0: usize, seq: &[usize]) -> f64 {
        let mut total = 0.0;
        for (dt, &a) in seq.iter().enumerate() {
            total += self.reward[t0 + dt][s][a];
            s = self.next[t0 + dt][s][a];
        }
        total
    }

    /// Best return over every action sequence from `(s, t)` whose first
    /// action is `a`, found by enumerating all `k^(H-t)` sequences.
    pub fn brute_force_q(&self, s: usize, t: usize, a: usize) -> f64 {
        let k = self.grid.len();
        let len = self.horizon - t;
        let mut seq = vec![0usize; len];
        seq[0] = a;
        let mut best = f64::NEG_INFINITY;
        loop {
            best = best.max(self.sequence_return(s, t, &seq));
            // odometer over positions 1..len
            let mut pos = len;
            loop {
                if pos == 1 {
                    return best;
                }
                pos -= 1;
                seq[pos] += 1;
                if seq[pos] < k {
                    break;
                }
                seq[pos] = 0;
            }
        }
    }

    /// Optimal first action at `(s, t)`; ties go to the smallest grid value.
    pub fn brute_force_label(&self, s: usize, t: usize) -> f64 {
        let mut best: Option<(f64, f64)> = None;
        for a in 0..self.grid.len() {
            let q = self.brute_force_q(s, t, a);
            let g = self.grid[a];
            best = match best {
                Some((bq, bg)) if bq > q || (bq == q && bg < g) => Some((bq, bg)),
                _ => Some((q, g)),
            };
        }
        best.unwrap().1
    }

    /// One sample per `(state, stage)`, state encoded as `[id]`.
    pub fn dataset(&self) -> (StateSampleSet, TransitionCube) {
        let mut rows = Vec::new();
        let mut provenance = Vec::new();
        let mut entries = Vec::new();
        for t in 0..self.horizon {
            for s in 0..self.n_states {
                rows.push(StateVector::new(vec![s as f64]));
                provenance.push((s, t));
                for a in 0..self.grid.len() {
                    entries.push(CubeEntry {
                        next_state: StateVector::new(vec![self.next[t][s][a] as f64]),
                        reward: self.reward[t][s][a],
                        terminal: false,
                        applied_action: self.grid[a],
                    });
                }
            }
        }
        let samples = StateSampleSet { rows, provenance };
        let cube = TransitionCube {
            n_rows: samples.len(),
            action_grid: self.grid.clone(),
            entries,
        };
        (samples, cube)
    }
}

/// Largest |Q - brute force| over all `(s, t, a)` and the number of label
/// disagreements after running FQI with exact tabular features.
pub fn fqi_vs_brute_force(mdp: &Mdp, mode: EngineMode) -> (f64, usize) {
    let (samples, cube) = mdp.dataset();
    let engine = EngineConfig {
        n_iterations: mdp.horizon + 1,
        mode,
        approximator: ApproximatorKind::Tabular,
        policy_approximator: ApproximatorKind::Tabular,
    };
    let encoding = encoding_for(&engine, mdp.horizon);
    let (q, _) = run_fqi(&samples, &cube, &engine, encoding).expect("fqi on a finite mdp");
    let mut worst: f64 = 0.0;
    for t in 0..mdp.horizon {
        for s in 0..mdp.n_states {
            for (a, &g) in mdp.grid.iter().enumerate() {
                let err = (q.value(&[s as f64], t, g) - mdp.brute_force_q(s, t, a)).abs();
                worst = worst.max(err);
            }
        }
    }
    let (_, labels) = extract_policy(&q, &samples, &cube, ApproximatorKind::Tabular).unwrap();
    let mismatches = samples
        .provenance
        .iter()
        .zip(&labels)
        .filter(|((s, t), l)| mdp.brute_force_label(*s, *t) != **l)
        .count();
    (worst, mismatches)
}

/// Sweeps every shape with ≤5 states, ≤3 actions and horizon ≤4,
/// `per_shape` seeded instances each, in finite-horizon and per-stage mode.
/// Returns (instances, worst value error, label mismatches).
pub fn mdp_sweep(per_shape: usize, seed: u64) -> (usize, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut count, mut worst, mut mismatches) = (0, 0.0f64, 0);
    for n_states in 1..=5 {
        for n_actions in 1..=3 {
            for horizon in 1..=4 {
                for _ in 0..per_shape {
                    let mdp = Mdp::random(n_states, n_actions, horizon, &mut rng);
                    for mode in [EngineMode::FiniteHorizon, EngineMode::PerStage] {
                        let (w, m) = fqi_vs_brute_force(&mdp, mode);
                        worst = worst.max(w);
                        mismatches += m;
                    }
                    count += 1;
                }
            }
        }
    }
    (count, worst, mismatches)
}

// ---------------------------------------------------------------------------
// Integrator

/// Global-error ratio of RK4 on dx/dt = -x over [0, 1] for `n` and `2n` steps.
pub fn rk4_convergence_ratio(n: usize) -> f64 {
    let error = |steps: usize| {
        let h = 1.0 / steps as f64;
        let mut x = vec![1.0];
        for _ in 0..steps {
            x = rk4_step(&x, 0.0, h, |s, _u, out| {
                out[0] = -s[0];
                Ok(())
            })
            .unwrap();
        }
        (x[0] - (-1.0f64).exp()).abs()
    };
    error(n) / error(2 * n)
}

/// Classical RK4 with `steps` substeps per stage on an arbitrary right-hand
/// side; used as a high-resolution reference.
pub fn reference_integrate(
    f: impl Fn(&[f64], f64) -> Vec<f64>,
    x0: &[f64],
    schedule: &[f64],
    stage_duration: f64,
    steps: usize,
) -> Vec<f64> {
    let h = stage_duration / steps as f64;
    let mut x = x0.to_vec();
    let axpy = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    for &u in schedule {
        for _ in 0..steps {
            let k1 = f(&x, u);
            let k2 = f(&axpy(&x, &k1, h / 2.0), u);
            let k3 = f(&axpy(&x, &k2, h / 2.0), u);
            let k4 = f(&axpy(&x, &k3, h), u);
            for i in 0..x.len() {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Random rollouts and conservation laws

pub fn default_models() -> Vec<ReactorConfig> {
    vec![
        ReactorConfig::BatchAb(BatchAbParams::default()),
        ReactorConfig::FedBatch(FedBatchParams::default()),
        ReactorConfig::SemiBatch(SemiBatchParams::default()),
    ]
}

/// `n` rollouts from random initial states (drawn from the model's default
/// sampling region) under uniformly random stage actions.
pub fn random_rollouts(config: &ReactorConfig, n: usize, seed: u64) -> Vec<Trajectory> {
    let model = config.model();
    let integrator = IntegratorConfig::for_model(model, IntegratorConfig::DEFAULT_SUBSTEPS).unwrap();
    let region: Vec<[f64; 2]> = model.default_init_region().iter().map(|&(a, b)| [a, b]).collect();
    let (lo, hi) = model.action_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x0 = draw_initial_state(model, &region, &mut rng).unwrap();
            let actions = (0..model.n_stages()).map(|_| rng.gen_range(lo..=hi)).collect();
            let schedule = Schedule::from_actions(actions);
            rollout(model, &schedule, &x0, &integrator, model.n_stages()).unwrap()
        })
        .collect()
}

/// Largest violation of the model's conservation laws and bounds along a
/// trajectory, measured against its own initial state.
pub fn balance_violation(config: &ReactorConfig, t: &Trajectory) -> f64 {
    let mut worst: f64 = 0.0;
    let mut bump = |v: f64| worst = worst.max(v);
    let x0 = &t.states[0];
    match config {
        ReactorConfig::BatchAb(_) => {
            for w in t.states.windows(2) {
                // A -> B -> C only removes material from A + B
                bump(w[1][0] + w[1][1] - (w[0][0] + w[0][1]));
            }
            for x in &t.states {
                bump(-x[0].min(x[1]));
                bump(x[0] + x[1] - 1.0);
            }
        }
        ReactorConfig::FedBatch(p) => {
            let a_c = |x: &[f64]| (x[0] + x[2]) * x[4];
            let b = |x: &[f64]| (x[1] + x[2] + 2.0 * x[3]) * x[4] - p.b_feed * x[4];
            for x in &t.states {
                bump((a_c(x) - a_c(x0)).abs());
                bump((b(x) - b(x0)).abs());
                bump(x[4] - p.v_max);
                bump(-x[..4].iter().cloned().fold(f64::INFINITY, f64::min));
            }
        }
        ReactorConfig::SemiBatch(p) => {
            let b = |x: &[f64]| (x[1] - x[0]) * x[2] - p.cb_in * x[2];
            for x in &t.states {
                bump((b(x) - b(x0)).abs());
                bump(x[2] - p.v_max);
                bump(x[1] - (p.cb_max + 1e-6));
                bump(-x[0].min(x[1]));
            }
        }
    }
    worst
}

/// |Σ stage rewards - expected total|: the performance gain for yield
/// models, minus the completion time (or horizon) for minimum-time ones.
pub fn telescoping_error(model: &dyn ReactorModel, t: &Trajectory) -> f64 {
    let total: f64 = t.stage_rewards.iter().sum();
    let expected = match t.completion_time {
        Some(tc) => -tc,
        None if model.is_terminal(t.final_state()) => f64::NAN,
        None => match model.objective() {
            batch_fqi::models::Objective::TerminalYield => {
                model.performance(t.final_state()) - model.performance(&t.states[0])
            }
            batch_fqi::models::Objective::MinimumTime { .. } => {
                -(t.n_stages() as f64) * model.stage_duration()
            }
        },
    };
    (total - expected).abs()
}

// ---------------------------------------------------------------------------
// Policy extraction

/// Number of samples whose stored label differs from a recomputation of the
/// one-step lookahead argmax (ties to the smallest grid value).
pub fn label_mismatches(agent: &TrainedAgent, horizon: usize) -> usize {
    let q = &agent.qmodel;
    let grid = &agent.cube.action_grid;
    let finite = !matches!(q.encoding.mode, EngineMode::Stationary);
    (0..agent.samples.len())
        .filter(|&i| {
            let next_stage = agent.samples.provenance[i].1 + 1;
            let mut best: Option<(f64, f64)> = None;
            for (j, &g) in grid.iter().enumerate() {
                let e = agent.cube.entry(i, j);
                let mut target = e.reward;
                if !e.terminal && (!finite || next_stage < horizon) {
                    target += grid
                        .iter()
                        .map(|&a| q.value(&e.next_state, next_stage, a))
                        .fold(f64::NEG_INFINITY, f64::max);
                }
                best = match best {
                    Some((bt, bg)) if bt > target || (bt == target && bg < g) => Some((bt, bg)),
                    _ => Some((target, g)),
                };
            }
            best.unwrap().1 != agent.labels[i]
        })
        .count()
}

// ---------------------------------------------------------------------------
// Regression

/// Worst prediction error of a near-unregularized ridge fit on random
/// degree-2 polynomial targets, evaluated off the training set.
pub fn ridge_recovery_error(dim: usize, n_train: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_terms = 1 + dim + dim * (dim + 1) / 2;
    let coef: Vec<f64> = (0..n_terms).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let poly = |x: &[f64]| {
        let mut v = coef[0];
        let mut c = 1;
        for i in 0..dim {
            v += coef[c] * x[i];
            c += 1;
        }
        for i in 0..dim {
            for j in i..dim {
                v += coef[c] * x[i] * x[j];
                c += 1;
            }
        }
        v
    };
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-3.0..5.0)).collect() };
    let rows: Vec<Vec<f64>> = (0..n_train).map(|_| draw()).collect();
    let probes: Vec<Vec<f64>> = (0..50).map(|_| draw()).collect();
    let y: Vec<f64> = rows.iter().map(|x| poly(x)).collect();
    let (model, _) = batch_fqi::approximator::ridge_fit(&rows, &y, 1e-12).unwrap();
    probes
        .iter()
        .map(|x| (model.predict(x).unwrap() - poly(x)).abs())
        .fold(0.0, f64::max)
}
