//! The three case-study reactors: derivative functions, parameter blocks,
//! action bounds and projection, and the stage-reward rule.
//!
//! * [`BatchAbParams`]: batch A → B → C with temperature as the control,
//!   maximize the mole fraction of B at the final time.
//! * [`FedBatchParams`]: isothermal fed-batch A + B → C, 2B → D with the
//!   feed rate of B as the control, maximize the final concentration of C.
//! * [`SemiBatchParams`]: isothermal semi-batch A + B → C under a
//!   cooling-failure safety bound on B, minimize the time to reach a target
//!   concentration of C.

use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_step, ConstraintFlags, IntegratorConfig, StateVector, MAX_DIM};
use crate::error::{Error, Result};

/// Slack allowed on the hard caps (volume, B concentration) when checking states.
pub const CAP_TOLERANCE: f64 = 1e-9;
/// Resolution of the safety-cap bisection.
pub const PROJECTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Maximize the performance quantity at the final time.
    TerminalYield,
    /// Reach `performance >= target` as early as possible.
    MinimumTime { target: f64 },
}

pub trait ReactorModel: Send + Sync {
    fn name(&self) -> &'static str;

    fn component_names(&self) -> &'static [&'static str];

    fn dim(&self) -> usize {
        self.component_names().len()
    }

    fn derivs(&self, x: &[f64], u: f64, out: &mut [f64]) -> Result<()>;

    /// Whether component `index` is floored at zero after each substep.
    fn is_nonnegative(&self, _index: usize) -> bool {
        true
    }

    fn action_bounds(&self) -> (f64, f64);

    fn initial_state(&self) -> StateVector;

    fn objective(&self) -> Objective;

    /// The tracked quantity: yield component or product concentration.
    fn performance(&self, x: &[f64]) -> f64;

    fn stage_duration(&self) -> f64;

    /// Stages in a full episode (fixed horizon, or the `t_max` cutoff for
    /// minimum-time models).
    fn n_stages(&self) -> usize;

    fn validate_state(&self, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state {x:?}")));
        }
        Ok(())
    }

    fn constraint_flags(&self, _x: &[f64]) -> ConstraintFlags {
        ConstraintFlags::default()
    }

    /// Largest feasible action not exceeding the clipped request.
    fn project_action(&self, _x: &[f64], u: f64, _config: &IntegratorConfig) -> Result<f64> {
        let (lo, hi) = self.action_bounds();
        Ok(u.clamp(lo, hi))
    }

    fn is_terminal(&self, x: &[f64]) -> bool {
        match self.objective() {
            Objective::TerminalYield => false,
            Objective::MinimumTime { target } => self.performance(x) >= target,
        }
    }

    fn default_action_grid(&self) -> Vec<f64>;

    /// Per-component box for initial states of sampling episodes.
    fn default_init_region(&self) -> Vec<(f64, f64)>;
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// Reward for moving from `before` to `after` over `dt`.
///
/// Terminal-yield models telescope: the sum over a rollout equals the final
/// minus the initial performance. Minimum-time models pay `-dt` per step
/// until the target is hit; the crossing step pays the linearly
/// interpolated fraction of `dt`.
pub fn stage_reward(model: &dyn ReactorModel, before: &[f64], after: &[f64], dt: f64) -> f64 {
    match model.objective() {
        Objective::TerminalYield => model.performance(after) - model.performance(before),
        Objective::MinimumTime { target } => {
            let qb = model.performance(before);
            if qb >= target {
                return 0.0;
            }
            let qa = model.performance(after);
            if qa >= target {
                -dt * ((target - qb) / (qa - qb)).clamp(0.0, 1.0)
            } else {
                -dt
            }
        }
    }
}

fn grid(lo: f64, step: f64, k: usize) -> Vec<f64> {
    (0..k).map(|j| lo + step * j as f64).collect()
}

fn volume_cap(v: f64, v_max: f64, u: f64, dt: f64) -> f64 {
    u.min(((v_max - v) / dt).max(0.0))
}

// ---------------------------------------------------------------------------
// Case 1: batch A -> B -> C

/// Batch reactor A → B → C; temperature (K) is the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchAbParams {
    pub t_min: f64,
    pub t_max: f64,
    pub final_time: f64,
    pub n_stages: usize,
    pub k_a: f64,
    pub e_a: f64,
    pub k_b: f64,
    pub e_b: f64,
    pub initial: [f64; 2],
}

impl Default for BatchAbParams {
    fn default() -> Self {
        BatchAbParams {
            t_min: 298.0,
            t_max: 398.0,
            final_time: 1.0,
            n_stages: 10,
            k_a: 4000.0,
            e_a: 2500.0,
            k_b: 6.2e5,
            e_b: 5000.0,
            initial: [1.0, 0.0],
        }
    }
}

impl BatchAbParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(Error::Config("batch-ab: t_min must be below t_max".into()));
        }
        if !(self.final_time > 0.0) || self.n_stages == 0 {
            return Err(Error::Config(
                "batch-ab: final_time and n_stages must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `dx1/dt = -ka exp(-Ea/T) x1²`, `dx2/dt = ka exp(-Ea/T) x1² - kb exp(-Eb/T) x2`.
pub fn derivs_case1(params: &BatchAbParams, x: &[f64], temperature: f64, out: &mut [f64]) {
    let r1 = params.k_a * (-params.e_a / temperature).exp() * x[0] * x[0];
    let r2 = params.k_b * (-params.e_b / temperature).exp() * x[1];
    out[0] = -r1;
    out[1] = r1 - r2;
}

impl ReactorModel for BatchAbParams {
    fn name(&self) -> &'static str {
        "batch-ab"
    }

    fn component_names(&self) -> &'static [&'static str] {
        &["x1", "x2"]
    }

    fn derivs(&self, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        derivs_case1(self, x, u, out);
        Ok(())
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    fn initial_state(&self) -> StateVector {
        StateVector::new(self.initial.to_vec())
    }

    fn objective(&self) -> Objective {
        Objective::TerminalYield
    }

    fn performance(&self, x: &[f64]) -> f64 {
        x[1]
    }

    fn stage_duration(&self) -> f64 {
        self.final_time / self.n_stages as f64
    }

    fn n_stages(&self) -> usize {
        self.n_stages
    }

    fn validate_state(&self, x: &[f64]) -> Result<()> {
        check_dim(2, x)?;
        if !(x[0] >= 0.0 && x[1] >= 0.0 && x[0] + x[1] <= 1.0 + CAP_TOLERANCE) {
            return Err(Error::Domain(format!(
                "batch-ab requires x1, x2 >= 0 and x1 + x2 <= 1, got {x:?}"
            )));
        }
        Ok(())
    }

    fn default_action_grid(&self) -> Vec<f64> {
        let k = 11;
        grid(self.t_min, (self.t_max - self.t_min) / (k - 1) as f64, k)
    }

    fn default_init_region(&self) -> Vec<(f64, f64)> {
        vec![(0.5, 1.0), (0.0, 0.5)]
    }
}

// ---------------------------------------------------------------------------
// Case 2: fed-batch A + B -> C, 2B -> D

/// Isothermal fed-batch reactor; state `[cA, cB, cC, cD, V]`, control is
/// the feed rate of B (m³/min).
///
/// The default kinetics (k1, k2, b_feed) are the widely used values for this
/// reaction scheme in the semi-batch benchmark literature; they are an
/// external choice, not a reproduction of any particular reported run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedBatchParams {
    pub k1: f64,
    pub k2: f64,
    pub b_feed: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub final_time: f64,
    pub n_stages: usize,
    pub initial: [f64; 5],
}

impl Default for FedBatchParams {
    fn default() -> Self {
        FedBatchParams {
            k1: 0.053,
            k2: 0.128,
            b_feed: 5.0,
            u_min: 0.0,
            u_max: 0.01,
            v_max: 1.0,
            final_time: 120.0,
            n_stages: 10,
            initial: [0.2, 0.0, 0.0, 0.0, 0.5],
        }
    }
}

impl FedBatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.b_feed > 0.0) {
            return Err(Error::Config("fed-batch: k1, k2, b_feed must be positive".into()));
        }
        if !(self.u_min <= self.u_max) {
            return Err(Error::Config("fed-batch: u_min must not exceed u_max".into()));
        }
        if !(self.final_time > 0.0) || self.n_stages == 0 {
            return Err(Error::Config(
                "fed-batch: final_time and n_stages must be positive".into(),
            ));
        }
        self.validate_state(&self.initial)
    }
}

/// Well-mixed fed-batch balances with dilution on every species.
pub fn derivs_case2(params: &FedBatchParams, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
    let [ca, cb, cc, cd, v] = [x[0], x[1], x[2], x[3], x[4]];
    if !(v > 0.0) {
        return Err(Error::Domain(format!("fed-batch volume must be positive, got {v}")));
    }
    let r1 = params.k1 * ca * cb;
    let r2 = params.k2 * cb * cb;
    let d = u / v;
    out[0] = -r1 - d * ca;
    out[1] = -r1 - 2.0 * r2 + d * (params.b_feed - cb);
    out[2] = r1 - d * cc;
    out[3] = r2 - d * cd;
    out[4] = u;
    Ok(())
}

impl ReactorModel for FedBatchParams {
    fn name(&self) -> &'static str {
        "fed-batch"
    }

    fn component_names(&self) -> &'static [&'static str] {
        &["cA", "cB", "cC", "cD", "V"]
    }

    fn derivs(&self, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        derivs_case2(self, x, u, out)
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }

    fn initial_state(&self) -> StateVector {
        StateVector::new(self.initial.to_vec())
    }

    fn objective(&self) -> Objective {
        Objective::TerminalYield
    }

    fn performance(&self, x: &[f64]) -> f64 {
        x[2]
    }

    fn stage_duration(&self) -> f64 {
        self.final_time / self.n_stages as f64
    }

    fn n_stages(&self) -> usize {
        self.n_stages
    }

    fn validate_state(&self, x: &[f64]) -> Result<()> {
        check_dim(5, x)?;
        let ok = x[..4].iter().all(|c| *c >= 0.0) && x[4] > 0.0 && x[4] <= self.v_max + CAP_TOLERANCE;
        if !ok {
            return Err(Error::Domain(format!(
                "fed-batch requires concentrations >= 0 and 0 < V <= {}, got {x:?}",
                self.v_max
            )));
        }
        Ok(())
    }

    fn constraint_flags(&self, x: &[f64]) -> ConstraintFlags {
        ConstraintFlags {
            volume_cap: x[4] >= self.v_max - CAP_TOLERANCE,
            safety_cap: false,
        }
    }

    fn project_action(&self, x: &[f64], u: f64, config: &IntegratorConfig) -> Result<f64> {
        let u = u.clamp(self.u_min, self.u_max);
        Ok(volume_cap(x[4], self.v_max, u, config.stage_duration))
    }

    fn default_action_grid(&self) -> Vec<f64> {
        let k = 11;
        grid(self.u_min, (self.u_max - self.u_min) / (k - 1) as f64, k)
    }

    fn default_init_region(&self) -> Vec<(f64, f64)> {
        let x0 = self.initial;
        vec![
            (0.1, 0.2),
            (x0[1], x0[1]),
            (x0[2], x0[2]),
            (x0[3], x0[3]),
            (0.5, 0.9),
        ]
    }
}

// ---------------------------------------------------------------------------
// Case 3: semi-batch A + B -> C, minimum time under a safety bound

/// Adiabatic-runaway data fixing the admissible B concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyParams {
    /// Reaction enthalpy, J/mol (negative for exothermic).
    pub delta_h: f64,
    /// Density, g/l.
    pub rho: f64,
    /// Heat capacity, J/(g K).
    pub cp: f64,
    /// Isothermal operating temperature, K.
    pub temperature: f64,
    /// Highest temperature tolerated after a cooling failure, K.
    pub max_temperature: f64,
}

impl Default for SafetyParams {
    fn default() -> Self {
        SafetyParams {
            delta_h: -60_000.0,
            rho: 900.0,
            cp: 4.2,
            temperature: 343.15,
            max_temperature: 353.15,
        }
    }
}

/// `cB_max = ρ Cp (T_max - T) / (-ΔH)`.
pub fn cb_max_from_safety(safety: &SafetyParams) -> Result<f64> {
    if !(-safety.delta_h > 0.0) {
        return Err(Error::Config("safety: -delta_h must be positive".into()));
    }
    if safety.max_temperature < safety.temperature {
        return Err(Error::Config(format!(
            "safety: max_temperature {} below operating temperature {}",
            safety.max_temperature, safety.temperature
        )));
    }
    Ok(safety.rho * safety.cp * (safety.max_temperature - safety.temperature) / -safety.delta_h)
}

/// Semi-batch reactor; state `[cA, cB, V]` (mol/l, mol/l, l), control is
/// the feed rate of B (l/h). Time is in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SemiBatchParams {
    pub k: f64,
    pub cb_in: f64,
    pub ca0: f64,
    pub cb0: f64,
    pub cc0: f64,
    pub v0: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub cb_max: f64,
    pub target_cc: f64,
    pub t_max: f64,
    pub stage_duration: f64,
    pub safety: Option<SafetyParams>,
}

impl Default for SemiBatchParams {
    fn default() -> Self {
        SemiBatchParams {
            k: 0.0482,
            cb_in: 2.0,
            ca0: 2.0,
            cb0: 0.63,
            cc0: 0.0,
            v0: 0.7,
            v_max: 1.0,
            u_min: 0.0,
            u_max: 0.1,
            cb_max: 0.63,
            target_cc: 0.6,
            t_max: 50.0,
            stage_duration: 2.5,
            safety: Some(SafetyParams::default()),
        }
    }
}

impl SemiBatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.cb_in > 0.0 && self.v0 > 0.0 && self.v_max >= self.v0) {
            return Err(Error::Config(
                "semi-batch: k, cb_in, v0 must be positive and v_max >= v0".into(),
            ));
        }
        if !(self.u_min <= self.u_max) || self.u_min < 0.0 {
            return Err(Error::Config("semi-batch: need 0 <= u_min <= u_max".into()));
        }
        if !(self.stage_duration > 0.0 && self.t_max >= self.stage_duration) {
            return Err(Error::Config(
                "semi-batch: need 0 < stage_duration <= t_max".into(),
            ));
        }
        if let Some(safety) = &self.safety {
            let derived = cb_max_from_safety(safety)?;
            if (derived - self.cb_max).abs() > 1e-9 * self.cb_max.abs().max(1.0) {
                return Err(Error::Config(format!(
                    "semi-batch: cb_max {} disagrees with the safety block ({derived})",
                    self.cb_max
                )));
            }
        }
        self.validate_state(&[self.ca0, self.cb0, self.v0])
    }

    /// Whether holding `u` for one stage keeps cB under the cap at every substep.
    fn stage_respects_cap(&self, x: &[f64], u: f64, config: &IntegratorConfig) -> Result<bool> {
        let h = config.substep();
        let mut state = [0.0; MAX_DIM];
        state[..3].copy_from_slice(x);
        for _ in 0..config.substeps_per_stage {
            let next = rk4_step(&state[..3], u, h, |s, a, out| self.derivs(s, a, out))?;
            for (i, v) in next.iter().enumerate() {
                state[i] = v.max(0.0);
            }
            if state[1] > self.cb_max + CAP_TOLERANCE {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn derivs_case3(params: &SemiBatchParams, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
    let [ca, cb, v] = [x[0], x[1], x[2]];
    if !(v > 0.0) {
        return Err(Error::Domain(format!("semi-batch volume must be positive, got {v}")));
    }
    let r = params.k * ca * cb;
    let d = u / v;
    out[0] = -r - d * ca;
    out[1] = -r + d * (params.cb_in - cb);
    out[2] = u;
    Ok(())
}

/// Product concentration reconstructed from the A balance.
pub fn cc_from_balance(params: &SemiBatchParams, x: &[f64]) -> Result<f64> {
    let v = x[2];
    if !(v > 0.0) {
        return Err(Error::Domain(format!("semi-batch volume must be positive, got {v}")));
    }
    let cc = (params.ca0 * params.v0 + params.cc0 * params.v0 - x[0] * v) / v;
    if cc < -1e-9 {
        return Err(Error::Consistency(format!(
            "reconstructed cC = {cc} is negative at state {x:?}"
        )));
    }
    Ok(cc)
}

impl ReactorModel for SemiBatchParams {
    fn name(&self) -> &'static str {
        "semi-batch"
    }

    fn component_names(&self) -> &'static [&'static str] {
        &["cA", "cB", "V"]
    }

    fn derivs(&self, x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        derivs_case3(self, x, u, out)
    }

    fn action_bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }

    fn initial_state(&self) -> StateVector {
        StateVector::new(vec![self.ca0, self.cb0, self.v0])
    }

    fn objective(&self) -> Objective {
        Objective::MinimumTime {
            target: self.target_cc,
        }
    }

    fn performance(&self, x: &[f64]) -> f64 {
        (self.ca0 * self.v0 + self.cc0 * self.v0 - x[0] * x[2]) / x[2]
    }

    fn stage_duration(&self) -> f64 {
        self.stage_duration
    }

    fn n_stages(&self) -> usize {
        (self.t_max / self.stage_duration - 1e-9).ceil() as usize
    }

    fn validate_state(&self, x: &[f64]) -> Result<()> {
        check_dim(3, x)?;
        let ok = x[0] >= 0.0
            && x[1] >= 0.0
            && x[1] <= self.cb_max + PROJECTION_TOLERANCE
            && x[2] > 0.0
            && x[2] <= self.v_max + CAP_TOLERANCE;
        if !ok {
            return Err(Error::Domain(format!(
                "semi-batch requires cA, cB >= 0, cB <= {}, 0 < V <= {}, got {x:?}",
                self.cb_max, self.v_max
            )));
        }
        Ok(())
    }

    fn constraint_flags(&self, x: &[f64]) -> ConstraintFlags {
        ConstraintFlags {
            volume_cap: x[2] >= self.v_max - CAP_TOLERANCE,
            safety_cap: x[1] >= self.cb_max - CAP_TOLERANCE,
        }
    }

    fn project_action(&self, x: &[f64], u: f64, config: &IntegratorConfig) -> Result<f64> {
        let u = volume_cap(x[2], self.v_max, u.clamp(self.u_min, self.u_max), config.stage_duration);
        if u <= 0.0 || self.stage_respects_cap(x, u, config)? {
            return Ok(u.max(0.0));
        }
        let (mut lo, mut hi) = (0.0, u);
        while hi - lo > PROJECTION_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if self.stage_respects_cap(x, mid, config)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(lo)
    }

    fn default_action_grid(&self) -> Vec<f64> {
        let k = 11;
        grid(self.u_min, (self.u_max - self.u_min) / (k - 1) as f64, k)
    }

    fn default_init_region(&self) -> Vec<(f64, f64)> {
        vec![
            (0.3 * self.ca0, self.ca0),
            (self.cb0, self.cb0),
            (self.v0, self.v0),
        ]
    }
}

// ---------------------------------------------------------------------------

/// Model selection as it appears in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReactorConfig {
    BatchAb(BatchAbParams),
    FedBatch(FedBatchParams),
    SemiBatch(SemiBatchParams),
}

impl ReactorConfig {
    pub fn model(&self) -> &dyn ReactorModel {
        match self {
            ReactorConfig::BatchAb(p) => p,
            ReactorConfig::FedBatch(p) => p,
            ReactorConfig::SemiBatch(p) => p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ReactorConfig::BatchAb(p) => p.validate(),
            ReactorConfig::FedBatch(p) => p.validate(),
            ReactorConfig::SemiBatch(p) => p.validate(),
        }
    }
}
