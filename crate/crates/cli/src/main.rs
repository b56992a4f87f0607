use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use batch_fqi::config::load_config_with;
use batch_fqi::experiment::{run_command, BaselineMethod, Command};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "batch-fqi", version, about = "Fitted Q-iteration control of batch reactors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample, build the transition cube, run Q-iteration and extract the policy.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize an open-loop schedule with a comparison method.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a named failure scenario under all three intervention modes.
    Scenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        scenario: String,
    },
    /// Summarize cvp-direct, idp and the learned policy side by side.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Idp,
    Cvp,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (path, seed, out, command) = match cli.command {
        Cmd::Train { config, seed, out } => (config, seed, out, Command::Train),
        Cmd::Baseline { method, config } => {
            let m = match method {
                Method::Idp => BaselineMethod::Idp,
                Method::Cvp => BaselineMethod::Cvp,
            };
            (config, None, None, Command::Baseline(m))
        }
        Cmd::Scenario { config, scenario } => (config, None, None, Command::Scenario(scenario)),
        Cmd::Compare { config } => (config, None, None, Command::Compare),
    };
    let cfg = load_config_with(&path, |c| {
        if let Some(s) = seed {
            c.seed = s;
        }
        if let Some(o) = out {
            c.output_dir = o;
        }
    })?;
    log::info!("config {} resolved", path.display());
    let artifacts = run_command(&cfg, &command)
        .with_context(|| format!("{} failed", path.display()))?;
    println!("run directory: {}", artifacts.command_dir.display());
    println!("config hash:   {}", artifacts.config_hash);
    for (k, v) in &artifacts.metrics {
        println!("{k:<34} {v:.6}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
