//! Command-line simulator: single runs, budget sweeps, and a built-in
//! self-test of the protocol invariants.
//!
//! Exit codes: 0 on success, 1 on configuration or I/O errors, 2 when a
//! simulation contract check fails.

mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use bridgedist::adversary::{DistributorFault, Strategy};
use bridgedist::metrics::SweepTable;
use bridgedist::sim::{run_config_trials, run_sweep, Mode, SimConfig};

#[derive(Parser)]
#[command(
    name = "bridgedist",
    version,
    about = "Adaptive bridge distribution simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for a number of seeded trials.
    Simulate(SimulateArgs),
    /// Run a budget sweep described by a JSON or TOML config file.
    Sweep {
        /// Path to the sweep configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in invariant suite.
    Selftest,
}

#[derive(Args)]
struct SimulateArgs {
    /// basic, leader, or decentralized.
    #[arg(long, default_value = "basic")]
    mode: String,
    /// Number of users.
    #[arg(long)]
    n: usize,
    /// Adversary budget (corrupt users).
    #[arg(long, default_value_t = 0)]
    t: usize,
    /// Number of distributors (1 for basic mode).
    #[arg(long, default_value_t = 1)]
    m: u32,
    /// prudent, aggressive, or stochastic:0.95 (any probability).
    #[arg(long, default_value = "prudent")]
    strategy: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u32,
    /// Safety cap on simulated rounds.
    #[arg(long)]
    max_rounds: Option<u32>,
    /// Corrupted distributors (highest indices, never the leader).
    #[arg(long, default_value_t = 0)]
    corrupt_distributors: u32,
    /// silent, garbage, or equivocate.
    #[arg(long, default_value = "garbage")]
    distributor_fault: String,
    /// Write the first trial's per-round series as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode> {
    match s {
        "basic" => Ok(Mode::Basic),
        "leader" => Ok(Mode::Leader),
        "decentralized" => Ok(Mode::Decentralized),
        other => bail!("unknown mode '{other}' (expected basic|leader|decentralized)"),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    match s {
        "prudent" => Ok(Strategy::Prudent),
        "aggressive" => Ok(Strategy::Aggressive),
        other => {
            let q = other
                .strip_prefix("stochastic:")
                .ok_or_else(|| anyhow!("unknown strategy '{other}'"))?
                .parse::<f64>()
                .context("stochastic probability must be a number")?;
            Ok(Strategy::Stochastic(q))
        }
    }
}

fn parse_fault(s: &str) -> Result<DistributorFault> {
    match s {
        "silent" => Ok(DistributorFault::Silent),
        "garbage" => Ok(DistributorFault::GarbageShares),
        "equivocate" => Ok(DistributorFault::EquivocateRandomness),
        other => bail!("unknown distributor fault '{other}'"),
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config = SimConfig::multi(
        parse_mode(&args.mode)?,
        args.n,
        args.t,
        args.m,
        parse_strategy(&args.strategy)?,
        args.seed,
    );
    config.trials = args.trials;
    config.max_rounds = args.max_rounds;
    config.corrupt_distributors = args.corrupt_distributors;
    config.distributor_fault = parse_fault(&args.distributor_fault)?;
    config.validate().map_err(|e| anyhow!("{e}"))?;

    let trials = run_config_trials(&config).map_err(|e| anyhow!("{e}"))?;
    for (k, series) in trials.iter().enumerate() {
        println!(
            "trial {k}: rounds={} bridges_used={} success={}",
            series.terminal.latency_rounds, series.terminal.bridges_used, series.terminal.success
        );
    }
    let row = SweepTable::aggregate(config.t as u64, &trials);
    println!(
        "aggregate over {} trials: latency {}..{} (mean {:.2}), bridges used {}..{} (mean {:.1}), failures {}",
        row.trials,
        row.latency_min,
        row.latency_max,
        row.latency_mean,
        row.used_min,
        row.used_max,
        row.used_mean,
        row.failures
    );
    if let Some(path) = &args.out {
        trials[0]
            .write_csv_path(path)
            .with_context(|| format!("writing {}", path.display()))?;
        println!("wrote per-round series of trial 0 to {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    #[serde(default = "default_mode")]
    mode: String,
    n: usize,
    #[serde(default)]
    m: Option<u32>,
    #[serde(default = "default_strategy")]
    strategy: String,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_trials")]
    trials: u32,
    #[serde(default)]
    max_rounds: Option<u32>,
    #[serde(default)]
    corrupt_distributors: u32,
    #[serde(default = "default_fault")]
    distributor_fault: String,
    sweep: SweepAxis,
    /// Output path for the aggregated table.
    out: PathBuf,
}

fn default_mode() -> String {
    "basic".into()
}
fn default_strategy() -> String {
    "prudent".into()
}
fn default_seed() -> u64 {
    1
}
fn default_trials() -> u32 {
    10
}
fn default_fault() -> String {
    "garbage".into()
}

/// Budget values: either an explicit list or an inclusive range.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepAxis {
    #[serde(default)]
    t_values: Option<Vec<usize>>,
    #[serde(default)]
    t_from: Option<usize>,
    #[serde(default)]
    t_to: Option<usize>,
    #[serde(default = "default_step")]
    t_step: usize,
}

fn default_step() -> usize {
    1
}

impl SweepAxis {
    fn values(&self) -> Result<Vec<usize>> {
        if let Some(vs) = &self.t_values {
            return Ok(vs.clone());
        }
        match (self.t_from, self.t_to) {
            (Some(from), Some(to)) if self.t_step > 0 => {
                Ok((from..=to).step_by(self.t_step).collect())
            }
            _ => bail!("sweep needs either t_values or t_from/t_to (with t_step > 0)"),
        }
    }
}

fn sweep(path: &PathBuf) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: SweepFile = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).context("parsing TOML sweep config")?
    } else {
        serde_json::from_str(&text).context("parsing JSON sweep config")?
    };
    let mode = parse_mode(&file.mode)?;
    let m = file.m.unwrap_or(if mode == Mode::Basic { 1 } else { 4 });
    let mut base = SimConfig::multi(
        mode,
        file.n,
        0,
        m,
        parse_strategy(&file.strategy)?,
        file.seed,
    );
    base.trials = file.trials;
    base.max_rounds = file.max_rounds;
    base.corrupt_distributors = file.corrupt_distributors;
    base.distributor_fault = parse_fault(&file.distributor_fault)?;
    let t_values = file.sweep.values()?;
    for &t in &t_values {
        let mut probe = base.clone();
        probe.t = t;
        probe.validate().map_err(|e| anyhow!("{e}"))?;
    }
    let table = run_sweep(&base, &t_values).map_err(|e| anyhow!("{e}"))?;
    table
        .write_csv_path(&file.out)
        .with_context(|| format!("writing {}", file.out.display()))?;
    println!(
        "wrote {} sweep rows to {}",
        table.rows.len(),
        file.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => match simulate(&args) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Command::Sweep { config } => match sweep(&config) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Command::Selftest => {
            if selftest::run_all() {
                ExitCode::SUCCESS
            } else {
                eprintln!("selftest: contract violations detected");
                ExitCode::from(2)
            }
        }
    }
}
