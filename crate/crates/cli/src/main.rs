use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lanesight", version, about = "Lane-change prediction pipelines")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML config, or a manifest whose stored config is reused.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key: `section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Global seed; every stochastic step derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Validate inputs and print the plan without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic highway scene.
    Synth,
    /// Convert a trajectory CSV plus lane map into a canonical scene.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lanes: PathBuf,
        /// Column preset (ngsim, canonical); overrides data.preset.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Label every trajectory from lane crossings.
    Label {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Extract per-frame features.
    Extract {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Train a model; labels and features default to being derived from the scene.
    Train {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Per-frame class probabilities for every trajectory.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Frame- and event-wise metrics of prediction files against labels.
    Evaluate {
        #[arg(long)]
        labels: PathBuf,
        /// `name=path` (repeatable); a bare path is named after its file stem.
        #[arg(long, required = true)]
        predictions: Vec<String>,
        /// Scene whose sample rate applies; defaults to metrics.sample_rate_hz.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Score only the validation vehicles of a training split file.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Attention contributions and diagrams for one target vehicle.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        vehicle: u32,
        /// Frames to explain (repeatable); defaults to the most confident lane-change frame.
        #[arg(long)]
        frame: Vec<i64>,
        /// Extra timeline strips: `name=path` prediction files.
        #[arg(long)]
        predictions: Vec<String>,
    },
    /// Merge evaluation reports and rank the methods.
    Rank {
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli.global, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
