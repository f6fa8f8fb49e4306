//! `flexenv`: batch experiments on heating flexibility envelopes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod exit;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Experiment;
use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(name = "flexenv", version, about = "Flexibility envelopes, reserve bidding and provision simulation")]
struct Cli {
    /// TOML experiment configuration; defaults are used for missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// First run seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Envelopes of every formulation over the comfort-width and risk grid.
    Envelope,
    /// Train a policy library and tabulate policy distance against sample count.
    TrainPolicies,
    /// Baselines and robust reserve bids.
    Bid,
    /// Closed-loop provision of the first seed with full traces.
    Simulate,
    /// Open-loop chance-constraint check of the upper envelope profile.
    Montecarlo,
    /// Intra-day price sensitivity of net revenue.
    Sweep,
    /// Full pipeline for every seed, formulation and scenario.
    Run {
        /// Also write the price sensitivity tables.
        #[arg(long)]
        sweep: bool,
    },
}

fn resolve(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = resolve(&cli)?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(exit::ConfigError("no subcommand given (see --help)".into()).into());
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| exit::ConfigError(format!("jobs: {e}")))?;
    let exp = Experiment::new(cfg)?;
    pool.install(|| match command {
        Command::Envelope => exp.cmd_envelope(),
        Command::TrainPolicies => exp.cmd_train_policies(),
        Command::Bid => exp.cmd_bid(),
        Command::Simulate => exp.cmd_simulate(),
        Command::Montecarlo => exp.cmd_montecarlo(),
        Command::Sweep => exp.cmd_sweep(),
        Command::Run { sweep } => exp.cmd_run(sweep),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
