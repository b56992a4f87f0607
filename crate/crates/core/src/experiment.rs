//! Command orchestration and run-directory persistence.
//!
//! Every command writes into `<output_dir>/<hash>/<command>/`, where `hash`
//! identifies the resolved config. Re-running a command with the same
//! config rewrites byte-identical files. A command that fails leaves an
//! `INVALID` marker holding the error next to whatever it had written.

use std::fs;
use std::path::{Path, PathBuf};

use crate::baselines::{cvp_optimize, idp_optimize, schedule_rollout, OptimizerResult, Schedule};
use crate::config::ResolvedConfig;
use crate::dynamics::{rollout, Trajectory};
use crate::error::{Error, Result};
use crate::fqi::{train_agent, PolicyModel, QModel, TrainedAgent};
use crate::models::{Objective, ReactorModel};
use crate::output::{emit_csv, emit_svg, Cell, Chart, Series, Table};
use crate::scenario::{compare_modes, nominal_schedule, ScenarioReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Idp,
    Cvp,
}

impl BaselineMethod {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineMethod::Idp => "idp",
            BaselineMethod::Cvp => "cvp-direct",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Train,
    Baseline(BaselineMethod),
    Scenario(String),
    Compare,
}

impl Command {
    fn dir_name(&self) -> String {
        match self {
            Command::Train => "train".into(),
            Command::Baseline(m) => format!("baseline-{}", m.label()),
            Command::Scenario(name) => format!("scenario-{name}"),
            Command::Compare => "compare".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub run_dir: PathBuf,
    pub command_dir: PathBuf,
    pub config_hash: String,
    /// Written files, relative to `run_dir`, in write order.
    pub files: Vec<PathBuf>,
    /// Headline numbers, also persisted in `metrics.csv`.
    pub metrics: Vec<(String, f64)>,
}

struct Writer {
    run_dir: PathBuf,
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files
            .push(p.strip_prefix(&self.run_dir).unwrap_or(&p).to_path_buf());
        p
    }

    fn csv(&mut self, name: &str, table: &Table) -> Result<()> {
        let p = self.path(name);
        emit_csv(table, &p)
    }

    fn svg(&mut self, name: &str, chart: &Chart) -> Result<()> {
        let p = self.path(name);
        emit_svg(chart, &p)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::io(format!("writing {}", p.display()), e))
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

/// Trajectory table: time, state components, then the action applied over
/// the stage starting at that row, its reward and the running total. The
/// final row carries the end state with empty action and reward.
pub fn trajectory_table(model: &dyn ReactorModel, t: &Trajectory) -> Table {
    let mut headers = vec!["t"];
    headers.extend(model.component_names());
    headers.extend(["action", "stage_reward", "cumulative_reward"]);
    let mut table = Table::new(&headers);
    let mut total = 0.0;
    for (i, state) in t.states.iter().enumerate() {
        let mut row = vec![Cell::Num(t.times[i])];
        row.extend(state.iter().map(|v| Cell::Num(*v)));
        if i < t.actions.len() {
            total += t.stage_rewards[i];
            row.extend([
                Cell::Num(t.actions[i]),
                Cell::Num(t.stage_rewards[i]),
                Cell::Num(total),
            ]);
        } else {
            row.extend([Cell::Text(String::new()), Cell::Text(String::new()), Cell::Num(total)]);
        }
        table.push(row);
    }
    table
}

fn metric_name(model: &dyn ReactorModel) -> &'static str {
    match model.objective() {
        Objective::TerminalYield => match model.name() {
            "batch-ab" => "final_x2",
            _ => "final_cC",
        },
        Objective::MinimumTime { .. } => "completion_time",
    }
}

fn metrics_table(metrics: &[(String, f64)], hash: &str) -> Table {
    let mut t = Table::new(&["metric", "value", "config_hash"]);
    for (k, v) in metrics {
        t.push(vec![Cell::Text(k.clone()), Cell::Num(*v), Cell::Text(hash.into())]);
    }
    t
}

fn slots_text(header: &str, regressors: &[crate::approximator::Approximator]) -> String {
    let mut s = format!("{header}\nslots {}\n", regressors.len());
    for (i, r) in regressors.iter().enumerate() {
        s.push_str(&format!("slot {i}\n"));
        s.push_str(&r.to_text());
    }
    s
}

pub fn qmodel_text(q: &QModel) -> String {
    let grid: Vec<String> = q.action_grid.iter().map(|a| format!("{a:?}")).collect();
    slots_text(
        &format!(
            "q-model mode {:?} horizon {}\ngrid {}",
            q.encoding.mode,
            q.encoding.horizon,
            grid.join(" ")
        ),
        &q.regressors,
    )
}

pub fn policy_text(p: &PolicyModel) -> String {
    slots_text(
        &format!(
            "policy mode {:?} horizon {}\nbounds {:?} {:?}",
            p.encoding.mode, p.encoding.horizon, p.bounds.0, p.bounds.1
        ),
        &p.regressors,
    )
}

fn action_chart(model: &dyn ReactorModel, title: &str, runs: &[(&str, &Trajectory)]) -> Chart {
    Chart {
        title: format!("{title} ({})", model.name()),
        x_label: "time".into(),
        y_label: "action".into(),
        series: runs
            .iter()
            .map(|(label, t)| Series::staircase(*label, &t.times, &t.actions))
            .collect(),
    }
}

fn performance_chart(model: &dyn ReactorModel, title: &str, runs: &[(&str, &Trajectory)]) -> Chart {
    Chart {
        title: format!("{title} ({})", model.name()),
        x_label: "time".into(),
        y_label: metric_name(model).trim_start_matches("final_").into(),
        series: runs
            .iter()
            .map(|(label, t)| {
                Series::new(
                    *label,
                    t.times
                        .iter()
                        .zip(&t.states)
                        .map(|(x, s)| (*x, model.performance(s)))
                        .collect(),
                )
            })
            .collect(),
    }
}

/// Trains the agent and rolls its policy out from the nominal initial state.
pub fn train(cfg: &ResolvedConfig) -> Result<(TrainedAgent, Trajectory)> {
    let model = cfg.document.model.model();
    let agent = train_agent(model, &cfg.sampling, &cfg.engine, &cfg.integrator)?;
    let nominal = rollout(
        model,
        &agent.policy,
        &model.initial_state(),
        &cfg.integrator,
        model.n_stages(),
    )?;
    Ok((agent, nominal))
}

pub fn run_baseline(cfg: &ResolvedConfig, method: BaselineMethod) -> Result<OptimizerResult> {
    let model = cfg.document.model.model();
    match method {
        BaselineMethod::Idp => idp_optimize(model, &cfg.idp, &cfg.integrator),
        BaselineMethod::Cvp => cvp_optimize(model, &cfg.cvp, &cfg.integrator),
    }
}

pub fn run_named_scenario(cfg: &ResolvedConfig, name: &str) -> Result<(TrainedAgent, Schedule, ScenarioReport)> {
    let spec = cfg.scenario(name)?;
    let model = cfg.document.model.model();
    let (agent, _) = train(cfg)?;
    let nominal = nominal_schedule(model, &agent.policy, &cfg.integrator)?;
    let report = compare_modes(
        model,
        &agent.policy,
        &nominal,
        &spec.disturbance(),
        &cfg.integrator,
        &cfg.config_hash()?,
    )?;
    Ok((agent, nominal, report))
}

fn execute(cfg: &ResolvedConfig, command: &Command, w: &mut Writer, metrics: &mut Vec<(String, f64)>) -> Result<()> {
    let model = cfg.document.model.model();
    let metric = metric_name(model);
    match command {
        Command::Train => {
            let (agent, nominal) = train(cfg)?;
            w.csv("samples.csv", &agent.samples.to_table(model))?;
            w.csv("cube.csv", &agent.cube.to_table(model))?;
            w.text("qmodel.txt", &qmodel_text(&agent.qmodel))?;
            w.text("policy.txt", &policy_text(&agent.policy))?;
            w.csv("diagnostics.csv", &agent.diagnostics.to_table())?;
            let mut labels = Table::new(&["row", "label"]);
            for (i, l) in agent.labels.iter().enumerate() {
                labels.push(vec![Cell::Int(i as i64), Cell::Num(*l)]);
            }
            w.csv("labels.csv", &labels)?;
            w.csv("nominal_trajectory.csv", &trajectory_table(model, &nominal))?;
            w.svg("policy_actions.svg", &action_chart(model, "learned policy", &[("q-learning", &nominal)]))?;
            w.svg(
                "policy_performance.svg",
                &performance_chart(model, "learned policy", &[("q-learning", &nominal)]),
            )?;
            metrics.push((metric.into(), nominal.final_metric(model)));
            if let Some(r) = agent.diagnostics.final_residual() {
                metrics.push(("bellman_residual".into(), r));
            }
            metrics.push(("out_of_bounds_requests".into(), nominal.out_of_bounds_requests as f64));
        }
        Command::Baseline(method) => {
            let res = run_baseline(cfg, *method)?;
            let t = schedule_rollout(model, &res.schedule, &cfg.integrator)?;
            w.csv("schedule.csv", &res.schedule.to_table())?;
            let label = match method {
                BaselineMethod::Idp => "pass",
                BaselineMethod::Cvp => "restart",
            };
            w.csv("trace.csv", &res.trace_table(label))?;
            w.csv("trajectory.csv", &trajectory_table(model, &t))?;
            metrics.push((metric.into(), t.final_metric(model)));
            metrics.push(("evaluations".into(), res.evaluations as f64));
        }
        Command::Scenario(name) => {
            let (_, nominal, report) = run_named_scenario(cfg, name)?;
            w.csv("original_schedule.csv", &nominal.to_table())?;
            for o in &report.outcomes {
                w.csv(&format!("{}.csv", o.mode.label()), &trajectory_table(model, &o.trajectory))?;
            }
            w.csv("summary.csv", &report.summary_table())?;
            let runs: Vec<(&str, &Trajectory)> = report
                .outcomes
                .iter()
                .map(|o| (o.mode.label(), &o.trajectory))
                .collect();
            w.svg("actions.svg", &action_chart(model, name, &runs))?;
            w.svg("performance.svg", &performance_chart(model, name, &runs))?;
            for o in &report.outcomes {
                metrics.push((format!("{}_{metric}", o.mode.label()), o.final_metric));
            }
        }
        Command::Compare => {
            let cvp = run_baseline(cfg, BaselineMethod::Cvp)?;
            let idp = run_baseline(cfg, BaselineMethod::Idp)?;
            let (_, learned) = train(cfg)?;
            let cvp_t = schedule_rollout(model, &cvp.schedule, &cfg.integrator)?;
            let idp_t = schedule_rollout(model, &idp.schedule, &cfg.integrator)?;
            let runs = [("cvp-direct", &cvp_t), ("idp", &idp_t), ("q-learning", &learned)];
            let mut table = Table::new(&["method", metric, "config_hash"]);
            let hash = cfg.config_hash()?;
            for (label, t) in runs {
                table.push(vec![label.into(), Cell::Num(t.final_metric(model)), Cell::Text(hash.clone())]);
                metrics.push((format!("{label}_{metric}"), t.final_metric(model)));
            }
            w.csv("comparison.csv", &table)?;
            for (label, t) in runs {
                w.csv(&format!("{label}_trajectory.csv"), &trajectory_table(model, t))?;
            }
            w.svg("actions.svg", &action_chart(model, "action profiles", &runs))?;
            w.svg("performance.svg", &performance_chart(model, "performance", &runs))?;
        }
    }
    Ok(())
}

/// Runs `command` and persists its artifacts.
pub fn run_command(cfg: &ResolvedConfig, command: &Command) -> Result<RunArtifacts> {
    let hash = cfg.config_hash()?;
    let run_dir = cfg.run_dir()?;
    let dir = run_dir.join(command.dir_name());
    create_dir(&dir)?;
    let marker = dir.join("INVALID");
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| Error::io(format!("removing {}", marker.display()), e))?;
    }

    let mut w = Writer {
        run_dir: run_dir.clone(),
        dir: run_dir.clone(),
        files: Vec::new(),
    };
    w.text("config.resolved.toml", &cfg.document.to_toml_string()?)?;
    w.dir = dir.clone();

    let mut metrics = Vec::new();
    let outcome = execute(cfg, command, &mut w, &mut metrics)
        .and_then(|_| w.csv("metrics.csv", &metrics_table(&metrics, &hash)));
    if let Err(e) = outcome {
        // best effort: the original error matters more than a failed marker write
        let _ = fs::write(&marker, format!("{e}\n"));
        return Err(e);
    }
    Ok(RunArtifacts {
        run_dir,
        command_dir: dir,
        config_hash: hash,
        files: w.files,
        metrics,
    })
}
