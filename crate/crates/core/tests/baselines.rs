mod common;

use batch_fqi::baselines::{
    best_constant_schedule, cvp_optimize, evaluate_schedule, idp_optimize, CvpConfig, IdpConfig, Schedule,
};
use batch_fqi::dynamics::{IntegratorConfig, StateVector};
use batch_fqi::models::{BatchAbParams, Objective, ReactorModel};
use batch_fqi::Result;
use common::reference_integrate;

/// dx/dt = u on [0, 1] with u ∈ [0, 1]; the yield is x(t_f).
struct Integrator {
    n_stages: usize,
}

impl ReactorModel for Integrator {
    fn name(&self) -> &'static str {
        "toy-integrator"
    }
    fn component_names(&self) -> &'static [&'static str] {
        &["x"]
    }
    fn derivs(&self, _x: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
        out[0] = u;
        Ok(())
    }
    fn is_nonnegative(&self, _index: usize) -> bool {
        false
    }
    fn action_bounds(&self) -> (f64, f64) {
        (0.0, 1.0)
    }
    fn initial_state(&self) -> StateVector {
        StateVector::new(vec![0.0])
    }
    fn objective(&self) -> Objective {
        Objective::TerminalYield
    }
    fn performance(&self, x: &[f64]) -> f64 {
        x[0]
    }
    fn stage_duration(&self) -> f64 {
        1.0 / self.n_stages as f64
    }
    fn n_stages(&self) -> usize {
        self.n_stages
    }
    fn default_action_grid(&self) -> Vec<f64> {
        vec![0.0, 0.5, 1.0]
    }
    fn default_init_region(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 0.0)]
    }
}

fn integrator(model: &dyn ReactorModel) -> IntegratorConfig {
    IntegratorConfig::for_model(model, IntegratorConfig::DEFAULT_SUBSTEPS).unwrap()
}

#[test]
fn toy_idp_is_bang_bang() {
    let toy = Integrator { n_stages: 5 };
    let r = idp_optimize(&toy, &IdpConfig::default(), &integrator(&toy)).unwrap();
    assert!(r.schedule.actions.iter().all(|&u| u >= 0.999), "{:?}", r.schedule.actions);
    assert!((r.schedule.objective - 1.0).abs() < 1e-3);
}

#[test]
fn toy_cvp_hits_upper_bound() {
    let toy = Integrator { n_stages: 5 };
    let r = cvp_optimize(&toy, &CvpConfig::default(), &integrator(&toy)).unwrap();
    assert!(r.schedule.actions.iter().all(|&u| (u - 1.0).abs() <= 1e-3), "{:?}", r.schedule.actions);
}

#[test]
fn single_stage_idp_picks_best_level() {
    let toy = Integrator { n_stages: 1 };
    let cfg = IdpConfig {
        candidates_per_stage: 7,
        passes: 1,
        ..Default::default()
    };
    let r = idp_optimize(&toy, &cfg, &integrator(&toy)).unwrap();
    assert_eq!(r.schedule.actions, vec![1.0]);
}

#[test]
fn case1_constant_schedule_matches_reference() {
    let model = BatchAbParams::default();
    let got = evaluate_schedule(&model, &Schedule::constant(298.0, 10), &integrator(&model)).unwrap();
    let f = |x: &[f64], t: f64| {
        let r1 = 4000.0 * (-2500.0 / t).exp() * x[0] * x[0];
        let r2 = 6.2e5 * (-5000.0 / t).exp() * x[1];
        vec![-r1, r1 - r2]
    };
    let reference = reference_integrate(f, &[1.0, 0.0], &[298.0; 10], 0.1, 2000);
    assert!((got - reference[1]).abs() <= 1e-5, "{got} vs {}", reference[1]);
}

#[test]
fn schedule_length_is_checked() {
    let model = BatchAbParams::default();
    assert!(evaluate_schedule(&model, &Schedule::constant(298.0, 9), &integrator(&model)).is_err());
}

#[test]
fn case1_optimizers_beat_best_constant() {
    let model = BatchAbParams::default();
    let cfg = integrator(&model);
    let constant = best_constant_schedule(&model, &model.default_action_grid(), &cfg).unwrap();
    let idp = idp_optimize(&model, &IdpConfig::default(), &cfg).unwrap();
    let cvp = cvp_optimize(&model, &CvpConfig::default(), &cfg).unwrap();
    assert!(idp.schedule.objective > constant.objective);
    assert!(cvp.schedule.objective > constant.objective);
    assert!(idp.trace.windows(2).all(|w| w[1] >= w[0]), "{:?}", idp.trace);
    assert!(cvp.trace.windows(2).all(|w| w[1] >= w[0]), "{:?}", cvp.trace);
    // the reported objective is the one the schedule actually achieves
    for s in [&idp.schedule, &cvp.schedule] {
        assert_eq!(evaluate_schedule(&model, s, &cfg).unwrap().to_bits(), s.objective.to_bits());
    }
}

#[test]
fn optimizers_are_seeded() {
    let toy = Integrator { n_stages: 3 };
    let cfg = integrator(&toy);
    let a = idp_optimize(&toy, &IdpConfig::default(), &cfg).unwrap();
    let b = idp_optimize(&toy, &IdpConfig::default(), &cfg).unwrap();
    assert_eq!(a, b);
    let a = cvp_optimize(&toy, &CvpConfig::default(), &cfg).unwrap();
    let b = cvp_optimize(&toy, &CvpConfig::default(), &cfg).unwrap();
    assert_eq!(a, b);
}
