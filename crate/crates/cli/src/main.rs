use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use egs::experiment::{self, ExperimentConfig};
use egs::numopt::{self, NumProblem, SolveOptions};
use egs::rcp::PriceVector;

#[derive(Parser)]
#[command(name = "egs", version, about = "Entanglement generation switch simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble and write trace, summary, and manifest files.
    Run(RunArgs),
    /// Solve the static rate allocation problem offline and print the optimum.
    Solve(SolveArgs),
    /// Print a built-in experiment config as TOML, or list them all.
    Preset { name: Option<String> },
}

#[derive(Args)]
struct Source {
    /// Built-in experiment name (see `egs preset`).
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Experiment config or manifest file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Accept step sizes at or above the convergence bound.
    #[arg(long)]
    override_step_bound: bool,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match (&self.preset, &self.config) {
            (Some(name), _) => experiment::preset(name)?,
            (None, Some(path)) => experiment::load_config(path)?,
            (None, None) => bail!("one of --preset or --config is required"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.override_step_bound |= self.override_step_bound;
        Ok(config)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long)]
    runs: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// Output directory [default: out/<name>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also solve the problem offline and record the optimum in the summary.
    #[arg(long)]
    emit_oracle: bool,
    /// Write mean per-session rates every this many slots to rates.csv.
    #[arg(long, value_name = "SLOTS")]
    sample_rates: Option<u64>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 1_000_000)]
    max_iter: u64,
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = args.source.load()?;
    if let Some(runs) = args.runs {
        config.runs = runs;
    }
    if let Some(horizon) = args.horizon {
        config.horizon = horizon;
    }
    if let Some(interval) = args.sample_rates {
        config.rate_sample_interval = Some(interval);
    }
    config.emit_oracle |= args.emit_oracle;
    let out = args
        .out
        .unwrap_or_else(|| PathBuf::from("out").join(&config.name));

    let report = experiment::run_experiment(&config, &out)
        .with_context(|| format!("experiment {} failed", config.name))?;
    let r = &report.record;
    println!("{}: {} runs x {} slots, {} sessions", r.name, r.runs, r.horizon, r.sessions);
    match (r.convergence_time, r.tightness) {
        (Some(t), Some(d)) => println!("converged: dtau = {t} slots, delta = {d:.6}"),
        _ => println!("not converged"),
    }
    println!("mean rate gap: {:.6e}", r.mean_rate_gap);
    println!("wrote {}", out.display());
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let config = args.source.load()?;
    let setup = config.resolve()?.setup;
    let options = SolveOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..SolveOptions::default()
    };
    let record = experiment::solve_oracle(&setup, &options)?;
    let problem = NumProblem::new(setup.table, setup.config, setup.utilities)?;
    let prices = PriceVector {
        central: record.central_price,
        nodes: record.node_prices.clone(),
    };
    let kkt = numopt::verify_kkt(&problem, &record.rates, &prices);
    print!("{}", experiment::to_toml(&record)?);
    println!("kkt_max_violation = {:e}", kkt.max_violation());
    if !record.converged {
        bail!("no convergence within {} iterations", args.max_iter);
    }
    Ok(())
}

fn preset(name: Option<String>) -> Result<()> {
    match name {
        Some(name) => print!("{}", experiment::to_toml(&experiment::preset(&name)?)?),
        None => experiment::PRESETS.iter().for_each(|p| println!("{p}")),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Solve(args) => solve(args),
        Command::Preset { name } => preset(name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
