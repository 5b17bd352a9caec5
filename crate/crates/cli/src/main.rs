use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use heal_core::{Error, ErrorKind, RunConfig};

mod commands;
mod plot;
mod run_dir;

use run_dir::RunDir;

/// Exit status for configuration and usage errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for unreadable or inconsistent data.
pub const EXIT_DATA: u8 = 3;
/// Exit status for failures during computation.
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "heal", version, about = "Anomaly localization by iterative restoration of synthetic anomalies")]
struct Cli {
    /// TOML run configuration; every key defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Overrides the top-level `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory of this command.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    out: PathBuf,

    /// Scoring threads; overrides `inference.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Write into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,

    /// Overrides one config key, e.g. `--set train.steps=200`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate train/val/test phantom datasets.
    Phantom,
    /// Render the forward corruption of one image for several `t`.
    CorruptPreview(commands::preview::PreviewArgs),
    /// Train a restorer on a healthy dataset.
    Train(commands::train::TrainArgs),
    /// Compute anomaly score maps for a dataset.
    Score(commands::score::ScoreArgs),
    /// Evaluate score maps against ground-truth masks.
    Eval(commands::eval::EvalArgs),
}

/// Shared state of one invocation.
pub struct Context {
    pub config: RunConfig,
    pub out: RunDir,
}

fn build_context(cli: &Cli) -> heal_core::Result<Context> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config = config.with_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.inference.workers = w;
    }
    config.validate()?;
    let out = RunDir::prepare(&cli.out, cli.force)?;
    out.echo_config(&config)?;
    Ok(Context { config, out })
}

fn run(cli: &Cli) -> heal_core::Result<()> {
    let ctx = build_context(cli)?;
    match &cli.command {
        Command::Phantom => commands::phantom::run(&ctx),
        Command::CorruptPreview(args) => commands::preview::run(&ctx, args),
        Command::Train(args) => commands::train::run(&ctx, args),
        Command::Score(args) => commands::score::run(&ctx, args),
        Command::Eval(args) => commands::eval::run(&ctx, args),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Runtime => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
