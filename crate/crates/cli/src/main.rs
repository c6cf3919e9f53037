use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pipf_cli::commands::{cmd_analyze, cmd_simulate, cmd_sweep};
use pipf_cli::config::RunConfig;
use pipf_cli::CliResult;

#[derive(Parser)]
#[command(
    name = "pipf",
    about = "Aggressive landing on the planar inverted pendulum with flywheel",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker thread count; overrides the configured one.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one landing case and write trajectory plus summary.
    Simulate {
        /// Footstep budget for the post-landing capture plan.
        #[arg(long, default_value_t = 0, value_name = "N")]
        nsteps: usize,
    },
    /// Evaluate the touchdown lattice, optionally across factor levels.
    Sweep {
        /// Factor levels as KEY=V1,V2,... (keys: I, vz0, alpha0 in degrees);
        /// repeatable, one key per occurrence.
        #[arg(long, value_name = "KEY=V1,V2,...")]
        factors: Vec<String>,
    },
    /// Post-process saved performance maps.
    Analyze {
        /// Performance-map CSV files to merge.
        #[arg(required = true, value_name = "MAP_CSV")]
        maps: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    match &cli.command {
        Command::Simulate { nsteps } => cmd_simulate(&cfg, *nsteps, &out_dir),
        Command::Sweep { factors } => cmd_sweep(&cfg, factors, &out_dir),
        Command::Analyze { maps } => cmd_analyze(maps, &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
