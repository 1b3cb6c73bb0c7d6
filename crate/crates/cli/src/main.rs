//! `gadaboost` command-line front end.

mod commands;
mod config;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Bad invocation or configuration; exits with status 1. Every other
/// failure is a data error and exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(name = "gadaboost", version, about = "Boosted Haar cascade training, detection and evaluation")]
struct Cli {
    /// Worker threads (defaults to the config value, then to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a cascade and write the model plus training reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a model over a directory of images.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        /// Detections CSV.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scan: ScanArgs,
    },
    /// Score detections against annotations and write the ROC curve.
    Eval {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// ROC CSV.
        #[arg(long)]
        out: PathBuf,
        /// Also report the true-positive rate at this false-positive count.
        #[arg(long)]
        fp: Option<f64>,
    },
    /// Train baseline and GA cells over several seeds and compare them.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of `bench_seeds`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the number of Haar features in a window.
    Enumerate {
        #[arg(long, default_value_t = 24)]
        width: usize,
        #[arg(long, default_value_t = 24)]
        height: usize,
    },
    /// Generate a procedural training and test corpus.
    Synth(commands::SynthArgs),
    /// Turn eye-coordinate lines (`path n lx ly rx ry ...`) into box annotations.
    ConvertEyes {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Config file supplying scan settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scale_factor: Option<f64>,
    #[arg(long)]
    step: Option<usize>,
    #[arg(long)]
    min_neighbors: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::Train { config, seed, out } => commands::train(&config, seed, threads, &out),
        Command::Detect { model, images, out, scan } => commands::detect(&model, &images, &out, &scan, threads),
        Command::Eval { detections, annotations, out, fp } => commands::eval(&detections, &annotations, &out, fp),
        Command::Bench { config, seed, out } => commands::bench(&config, seed, threads, &out),
        Command::Enumerate { width, height } => commands::enumerate(width, height),
        Command::Synth(args) => commands::synth(&args),
        Command::ConvertEyes { input, out } => commands::convert_eyes(&input, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
