//! `romkit`: build reduced-operator databases by greedy sampling, query
//! them without touching the full model, benchmark sampling strategies,
//! run database-backed optimization, and trace coupled-system damping.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! failure or non-convergence. Outputs are CSV files under the configured
//! directory; every file starts with a `# config-hash:` provenance line,
//! and wall-clock times are confined to a single `# timing:` comment so
//! reruns are byte-identical elsewhere.

mod commands;
mod config;
mod problem;
mod sampling;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration, unreadable files: exit 2.
    #[error("{0}")]
    Config(String),
    /// A numerical routine failed outright: exit 3.
    #[error("{0}")]
    Numerical(String),
    /// The run finished but did not reach its tolerance: exit 3.
    #[error("{0}")]
    NonConvergence(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::NonConvergence(_) => 3,
        }
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Output directory: the `--output` flag wins over `[output] dir`, which
/// defaults to the current directory. Created if absent.
pub fn output_dir(cfg: &config::RunConfig, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = match flag {
        Some(p) => p.clone(),
        None => match cfg.str_opt("output", "dir") {
            Some(d) => cfg.resolve(d),
            None => PathBuf::from("."),
        },
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

#[derive(Parser)]
#[command(
    name = "romkit",
    version,
    about = "Parametric reduced-order models: sample, store, interpolate, optimize"
)]
struct Cli {
    /// Upper bound on worker threads. The numerical kernels run
    /// single-threaded, so values above 1 are accepted but unused.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Greedily sample the parameter box and store the reduced operators.
    BuildDb(BuildDbArgs),
    /// Evaluate the interpolated reduced model at one parameter point.
    Query(QueryArgs),
    /// Run several sampling strategies on one configuration and compare.
    GreedyBench(BenchArgs),
    /// Minimize the configured objective through the reduced database.
    Optimize(OptimizeArgs),
    /// Interpolate coupled-system eigenvalues and damping sensitivities.
    FlutterAnalyze(FlutterArgs),
}

#[derive(Args)]
struct BuildDbArgs {
    /// Run-configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the sampling seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Reduced-operator database produced by build-db.
    #[arg(long)]
    db: PathBuf,
    /// Print solver accounting to stderr.
    #[arg(long)]
    verbose: bool,
    /// Parameter point, one value per coordinate.
    #[arg(required = true, num_args = 1..)]
    mu: Vec<f64>,
}

#[derive(Args)]
struct BenchArgs {
    /// Run-configuration file; `[sampling] strategies` lists the entrants.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the sampling seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Run-configuration file with the `[optimizer]` section.
    #[arg(long)]
    config: PathBuf,
    /// Reduced-operator database; required for the reduced baseline.
    #[arg(long)]
    db: Option<PathBuf>,
    /// Number of starting points; the first is `[optimizer] mu0`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    multi_start: u32,
    /// Seed for the extra starting points; overrides `[optimizer] seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation path: the reduced database or the full model.
    #[arg(long, value_enum, default_value_t = Baseline::Rom)]
    baseline: Baseline,
    /// Overrides the output directory from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Rom,
    Hdm,
}

#[derive(Args)]
struct FlutterArgs {
    /// Run-configuration file with the `[aeroelastic]` section.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the model seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory from the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 1 {
        log::info!("--threads {} accepted; this build runs single-threaded", cli.threads);
    }
    match cli.command {
        Command::BuildDb(args) => commands::build_db::run(&args),
        Command::Query(args) => commands::query::run(&args),
        Command::GreedyBench(args) => commands::bench::run(&args),
        Command::Optimize(args) => commands::optimize::run(&args),
        Command::FlutterAnalyze(args) => commands::flutter::run(&args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
