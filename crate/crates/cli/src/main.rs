//! `visemeflow` command line: every pipeline stage as a subcommand.

mod commands;
mod config;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};
use visemeflow::{Error, ErrorKind, Result};

use crate::config::{resolve, RunConfig};

#[derive(Parser)]
#[command(name = "visemeflow", version, about = "Visual word recognition from mouth-region video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of scene frames and its raw manifest.
    Synth(RunConfig),
    /// Detect and crop the mouth in every frame, pad to T, write video tensors.
    Preprocess(RunConfig),
    /// Split a manifest into train, validation and test manifests.
    Split(RunConfig),
    /// Train the convolutional autoencoder on single frames.
    TrainCae(RunConfig),
    /// Train the lip / non-lip patch classifier used as the baseline extractor.
    TrainBaselineCnn(RunConfig),
    /// Turn video tensors into per-frame feature sequences.
    ExtractFeatures(RunConfig),
    /// Train the LSTM word classifier on feature sequences.
    TrainLstm(RunConfig),
    /// Evaluate extractor + classifier on train, validation and test manifests.
    Eval(RunConfig),
    /// Run every held-out-speaker fold end to end and average test accuracy.
    Msi(RunConfig),
    /// Write first-layer feature maps and autoencoder reconstructions as PGM.
    Visualize(RunConfig),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Preprocess(_) => "preprocess",
            Command::Split(_) => "split",
            Command::TrainCae(_) => "train-cae",
            Command::TrainBaselineCnn(_) => "train-baseline-cnn",
            Command::ExtractFeatures(_) => "extract-features",
            Command::TrainLstm(_) => "train-lstm",
            Command::Eval(_) => "eval",
            Command::Msi(_) => "msi",
            Command::Visualize(_) => "visualize",
        }
    }

    fn args(&self) -> &RunConfig {
        match self {
            Command::Synth(c)
            | Command::Preprocess(c)
            | Command::Split(c)
            | Command::TrainCae(c)
            | Command::TrainBaselineCnn(c)
            | Command::ExtractFeatures(c)
            | Command::TrainLstm(c)
            | Command::Eval(c)
            | Command::Msi(c)
            | Command::Visualize(c) => c,
        }
    }
}

fn init_threads() -> Result<()> {
    let threads = match std::env::var("VISEMEFLOW_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("VISEMEFLOW_THREADS must be a positive integer, got `{v}`")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(command: &Command) -> Result<()> {
    init_threads()?;
    let name = command.name();
    let resolved = resolve(name, command.args())?;
    let cfg = &resolved.config;
    cfg.seed()?;
    match command {
        Command::Synth(_) => commands::synth(cfg),
        Command::Preprocess(_) => commands::preprocess(cfg),
        Command::Split(_) => commands::split(cfg),
        Command::TrainCae(_) => commands::train_cae_command(cfg),
        Command::TrainBaselineCnn(_) => commands::train_baseline_cnn(cfg),
        Command::ExtractFeatures(_) => commands::extract_features(cfg),
        Command::TrainLstm(_) => commands::train_lstm(cfg),
        Command::Eval(_) => commands::eval(cfg, &resolved),
        Command::Msi(_) => commands::msi(cfg, &resolved),
        Command::Visualize(_) => commands::visualize(cfg),
    }?;
    resolved.write_meta(name, &cfg.out()?)
}

fn fail(code: u8, kind: &str, message: &str) -> ExitCode {
    let line: Vec<&str> = message.split_whitespace().collect();
    eprintln!("error: {kind}: {}", line.join(" "));
    ExitCode::from(code)
}

/// First line of a clap error without its `error: ` prefix.
fn clap_message(e: &clap::Error) -> String {
    let text = e.render().to_string();
    let first = text.lines().next().unwrap_or_default();
    first.strip_prefix("error: ").unwrap_or(first).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ClapErrorKind::MissingSubcommand | ClapErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    fail(2, "usage", "missing subcommand (see --help)")
                }
                ClapErrorKind::InvalidSubcommand => fail(2, "usage", &clap_message(&e)),
                _ => fail(3, "config", &clap_message(&e)),
            };
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.kind() {
            ErrorKind::Config => fail(3, "config", &e.to_string()),
            ErrorKind::Data => fail(4, "data", &e.to_string()),
            ErrorKind::Divergence => fail(5, "divergence", &e.to_string()),
        },
    }
}
