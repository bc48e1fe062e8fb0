use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};

use airflux::harness::{
    cmd_converge, cmd_drift, cmd_run, cmd_speedup, cmd_staleness, cmd_throughput, load_scenario,
    parse_override, HarnessError, RunConfig, SEED_ENV,
};

/// Asynchronous online-learning experiments on a dataflow engine.
#[derive(Parser)]
#[command(name = "airflux", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ranks: Option<u32>,
    /// sync, asgd or ssp.
    #[arg(long)]
    mode: Option<String>,
    /// deterministic or threads.
    #[arg(long)]
    executor: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    alpha_scaling: Option<bool>,
    /// Any configuration key, e.g. `--set learner.dim=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Loss curves for several rank counts against sequential SGD.
    Converge(Common),
    /// Examples per second and parallel efficiency.
    Speedup(Common),
    /// Staleness log, histogram and oracle verification.
    Staleness {
        #[command(flatten)]
        common: Common,
        /// Replay the hand-scheduled three-rank example instead of a run.
        #[arg(long)]
        scripted: bool,
    },
    /// Sustainable-throughput trials.
    Throughput(Common),
    /// Concept-drift experiment with controls.
    Drift {
        #[command(flatten)]
        common: Common,
        /// Scenario file; built-in scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// A single training run.
    Run(Common),
}

impl Common {
    fn load(&self) -> Result<RunConfig, HarnessError> {
        let mut overrides = Vec::new();
        let mut push = |k: &str, v: toml::Value| overrides.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("seed", toml::Value::Integer(s as i64));
        }
        if let Some(n) = self.ranks {
            push("n_ranks", toml::Value::Integer(n.into()));
        }
        if let Some(m) = &self.mode {
            push("mode", toml::Value::String(m.clone()));
        }
        if let Some(e) = &self.executor {
            push("executor", toml::Value::String(e.clone()));
        }
        if let Some(b) = self.batch_size {
            push("batch_size", toml::Value::Integer(b as i64));
        }
        if let Some(a) = self.alpha {
            push("alpha", toml::Value::Float(a));
        }
        if let Some(a) = self.alpha_scaling {
            push("alpha_scaling", toml::Value::Boolean(a));
        }
        if let Some(o) = &self.out {
            push("output_dir", toml::Value::String(o.display().to_string()));
        }
        for s in &self.set {
            overrides.push(parse_override(s)?);
        }
        let env = std::env::var(SEED_ENV).ok();
        RunConfig::load(self.config.as_deref(), env.as_deref(), &overrides)
    }
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v).context("serializing result")?);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    let report = |warnings: &[String], dir: &std::path::Path| {
        for w in warnings {
            eprintln!("warning: {w}");
        }
        eprintln!("artifacts written to {}", dir.display());
    };
    match cmd {
        Command::Converge(c) => {
            let cfg = c.load()?;
            let out = cmd_converge(&cfg)?;
            report(&out.warnings, &cfg.output_dir);
            print_json(&out.result).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Command::Speedup(c) => {
            let cfg = c.load()?;
            let out = cmd_speedup(&cfg)?;
            report(&out.warnings, &cfg.output_dir);
            print_json(&out.result).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Command::Staleness { common, scripted } => {
            let cfg = common.load()?;
            let out = cmd_staleness(&cfg, scripted)?;
            report(&out.warnings, &cfg.output_dir);
            print_json(&out.result).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Command::Throughput(c) => {
            let cfg = c.load()?;
            let out = cmd_throughput(&cfg)?;
            report(&out.warnings, &cfg.output_dir);
            print_json(&out.result).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Command::Drift { common, scenario } => {
            let cfg = common.load()?;
            let s = load_scenario(scenario.as_deref())?;
            let out = cmd_drift(&cfg, &s)?;
            report(&out.warnings, &cfg.output_dir);
            print_json(&out.result).map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Command::Run(c) => {
            let cfg = c.load()?;
            let out = cmd_run(&cfg)?;
            report(&out.warnings, &cfg.output_dir);
            let m = &out.result;
            println!("batches {}  wall {:.3}s  theta {}", m.loss_curve.len(), m.wall_time_ns as f64 / 1e9, m.theta_digest);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {:#}", anyhow::Error::new(e));
            ExitCode::from(code as u8)
        }
    }
}
