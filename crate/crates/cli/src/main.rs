mod commands;
mod config_file;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use afl_core::orchestrator::{ExperimentConfig, Mode};
use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "afl-sim", version, about = "Asynchronous federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment file of `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also render SVG line plots.
    #[arg(long)]
    render: bool,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// One experiment.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
    },
    /// Cross product of client fractions and seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Paired asynchronous and synchronous runs per seed.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Numerical checks of the convergence analysis.
    Verify {
        /// martingale, sampling, sequential, drift, recursion, theorem or all
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    config_file::parse_mode(s)
}

fn load(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = config_file::load_config(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
    config_file::apply_overrides(&mut cfg, &common.set).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn seeds_or_default(seeds: Vec<u64>, cfg: &ExperimentConfig) -> Vec<u64> {
    if seeds.is_empty() {
        vec![cfg.seed]
    } else {
        seeds
    }
}

fn configure_threads() -> CliResult {
    let Ok(raw) = std::env::var("AFL_SIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("AFL_SIM_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult {
    configure_threads()?;
    match cli.command {
        Command::Run { common, seed, mode } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            commands::cmd_run(&cfg, &common.out, common.render)
        }
        Command::Sweep { common, fractions, seeds } => {
            let cfg = load(&common)?;
            let seeds = seeds_or_default(seeds, &cfg);
            commands::cmd_sweep(&cfg, &fractions, &seeds, &common.out, common.render)
        }
        Command::Compare { common, seeds } => {
            let cfg = load(&common)?;
            let seeds = seeds_or_default(seeds, &cfg);
            commands::cmd_compare(&cfg, &seeds, &common.out, common.render)
        }
        Command::Verify { suite, out, seed } => commands::cmd_verify(&suite, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afl-sim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
