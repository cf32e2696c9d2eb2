use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use station_adp::config::{ExperimentConfig, Mode};
use station_adp::dynamics::Vehicle;
use station_adp::experiment::{self, REPORT_FILE, TRAJECTORY_FILE};
use station_adp::sysid::HistoryStack;
use station_adp::Result;

#[derive(Parser)]
#[command(version, about = "Approximate-optimal station keeping for a planar marine craft")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record an exciting trajectory and write the history stack.
    Collect(Common),
    /// Run the closed-loop station-keeping experiment.
    Run(Common),
    /// Print the Riccati solution, gain and initial weights as JSON.
    Oracle(Common),
    /// Print stack and gain diagnostics as JSON.
    Check(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// History stack CSV (overrides `stack.path`).
    #[arg(long)]
    stack: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for noise and sampling (overrides `sim.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Experiment mode: time-varying, constant-current or linear-test (overrides `mode`).
    #[arg(long)]
    mode: Option<Mode>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.stack {
            cfg.stack_path = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_stack(cfg: &ExperimentConfig) -> Result<HistoryStack> {
    let vehicle = Vehicle::new(cfg.vehicle.clone())?;
    HistoryStack::load_csv(&cfg.stack_path, &vehicle, cfg.stack_capacity)
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Collect(c) => {
            let cfg = c.config()?;
            let stack = experiment::collect(&cfg)?;
            if let Some(dir) = cfg.stack_path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            stack.save_csv(&cfg.stack_path)?;
            let (_, y_min) = stack.rank_condition();
            eprintln!(
                "wrote {} points to {} (y_min = {y_min:.3e})",
                stack.len(),
                cfg.stack_path.display()
            );
        }
        Command::Run(c) => {
            let cfg = c.config()?;
            let stack = match cfg.mode {
                Mode::LinearTest if !cfg.stack_path.exists() => HistoryStack::new(cfg.stack_capacity),
                _ => load_stack(&cfg)?,
            };
            let report = experiment::run_and_save(&cfg, &stack, &cfg.output_dir)?;
            println!("{}", report.to_json()?);
            eprintln!(
                "wrote {} and {} in {}",
                TRAJECTORY_FILE,
                REPORT_FILE,
                cfg.output_dir.display()
            );
        }
        Command::Oracle(c) => {
            let cfg = c.config()?;
            println!("{}", serde_json::to_string_pretty(&experiment::oracle(&cfg)?)?);
        }
        Command::Check(c) => {
            let cfg = c.config()?;
            let stack = load_stack(&cfg)?;
            let report = experiment::check(&cfg, &stack)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            for p in report.problems() {
                eprintln!("warning: {p}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
