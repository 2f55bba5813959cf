//! `onetfwi`: every workflow of the toolkit behind one binary.
//!
//! Exit codes: 1 usage, 2 config, 3 data, 4 numerical. Failures print one
//! `onetfwi: error[<kind>]: <reason>` line on stderr.

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::{ExperimentConfig, Overrides, DATA_DIR_ENV};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, kind: "usage", message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, kind: "config", message: message.into() }
    }
}

impl From<onetfwi_core::Error> for CliError {
    fn from(e: onetfwi_core::Error) -> Self {
        if e.is_numerical() {
            Self { code: 4, kind: "numerical", message: e.to_string() }
        } else {
            Self { code: 3, kind: "data", message: e.to_string() }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "onetfwi", version, about = "DeepONet seismic inversion, acoustic wave modelling and FWI")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset root; overrides the environment and the configuration.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Velocity NPY to shot-gather NPY.
    Simulate {
        /// `[ny, nx]`, `[B, ny, nx]` or `[B, 1, ny, nx]` velocities.
        #[arg(long)]
        velocity: PathBuf,
    },
    /// Synthesize the layered toy dataset.
    MakeToy {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_parser = ["train", "test"])]
        split: Option<String>,
    },
    /// Train a model; writes a checkpoint and the loss history.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Checkpoint and gathers to predicted velocities.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `[B, S, T, R]` gathers.
        #[arg(long)]
        gathers: PathBuf,
    },
    /// Add noise and mask receivers as configured in `corruption`.
    Corrupt {
        #[arg(long)]
        gathers: PathBuf,
    },
    /// Score a checkpoint on a test manifest under the configured corruption.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        condition: Option<String>,
    },
    /// Adjoint-state inversion from an initial model.
    Fwi {
        #[command(flatten)]
        observed: Observed,
        /// Initial velocity; homogeneous at `fwi.homogeneous_speed` if absent.
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Inversions from the network prediction and from a homogeneous start.
    Hybrid {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        observed: Observed,
    },
    /// Collect CSV and NPY outputs for figure rendering.
    Export {
        /// Directories to collect from (default: the output directory).
        #[arg(long = "from")]
        sources: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Observed {
    /// `[S, T, R]` or `[B, S, T, R]` gathers.
    #[arg(long)]
    observed: PathBuf,
    /// Sample to read from batched files.
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// True velocity, for model-error tracking.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        data_dir: cli.data_dir.clone(),
        env_data_dir: std::env::var_os(DATA_DIR_ENV).map(PathBuf::from),
    });
    cfg.validate()?;
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("worker pool: {e}")))?;
    }
    let out = cfg.output.directory.clone();
    std::fs::create_dir_all(&out).map_err(|e| CliError::from(onetfwi_core::Error::io(&out, e)))?;
    commands::write_resolved_config(&cfg, &out)?;

    match cli.command {
        Command::Simulate { velocity } => commands::simulate(&cfg, &velocity),
        Command::MakeToy { samples, split } => commands::make_toy(&cfg, samples, split.as_deref()),
        Command::Train { train, val } => commands::train(&cfg, train, val),
        Command::Predict { checkpoint, gathers } => commands::predict(&cfg, &checkpoint, &gathers),
        Command::Corrupt { gathers } => commands::corrupt(&cfg, &gathers),
        Command::Evaluate { checkpoint, test, condition } => commands::evaluate(&cfg, &checkpoint, test, condition),
        Command::Fwi { observed, initial } => {
            commands::fwi(&cfg, &observed.observed, observed.index, initial.as_deref(), observed.truth.as_deref())
        }
        Command::Hybrid { checkpoint, observed } => {
            commands::hybrid(&cfg, &checkpoint, &observed.observed, observed.index, observed.truth.as_deref())
        }
        Command::Export { sources } => commands::export(&cfg, &sources),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("onetfwi: error[usage]: {first}");
            return ExitCode::from(1);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("onetfwi: error[{}]: {}", e.kind, e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}
