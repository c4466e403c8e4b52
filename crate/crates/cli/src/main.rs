//! `noiseadapt`: synthesize corpora, build the noisy test grid, train,
//! evaluate, decode and gradient-check from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use config::{parse_assignment, RunConfig};

#[derive(Parser)]
#[command(name = "noiseadapt", version, about = "Noise-robust speech recognition workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(Args)]
struct Common {
    /// JSON config file with flat dotted keys; flags override its values
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory that receives every output artifact
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed [default: 0]
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker thread cap [default: 1]
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Override one config key, e.g. --set train.epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic tone corpus (train/dev/test) and the noise set
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build the noisy test grid from clean utterances and test-split noise
    Mix {
        #[command(flatten)]
        common: Common,
        /// Manifest of clean utterances to corrupt
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Noise manifest (its test split is used)
        #[arg(long, value_name = "PATH")]
        noise: Option<PathBuf>,
        /// Comma-separated SNR list in dB [default: 0,5,10,15,20]
        #[arg(long, value_name = "DB,...", value_delimiter = ',')]
        snrs: Option<Vec<f64>>,
    },
    /// Train a model in one of the modes VanillaDAT, SoftFreezeDAT, MTL, AvT
    Train {
        #[command(flatten)]
        common: Common,
        /// Training mode
        #[arg(long, value_name = "MODE")]
        mode: Option<String>,
        /// Manifest of clean training utterances
        #[arg(long, value_name = "PATH")]
        train: Option<PathBuf>,
        /// Manifest of clean development utterances
        #[arg(long, value_name = "PATH")]
        dev: Option<PathBuf>,
        /// Noise manifest (its train split is used)
        #[arg(long, value_name = "PATH")]
        noise: Option<PathBuf>,
        /// Checkpoint to start from instead of a fresh initialisation
        #[arg(long, value_name = "PATH")]
        init: Option<PathBuf>,
    },
    /// Write the WER results grid of a checkpoint over a test manifest
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Test manifest (noisy and/or clean entries)
        #[arg(long, value_name = "PATH")]
        test: Option<PathBuf>,
        /// Extra manifest of clean utterances for the clean column
        #[arg(long, value_name = "PATH")]
        clean: Option<PathBuf>,
        /// Row name in the results CSV [default: checkpoint file stem]
        #[arg(long, value_name = "NAME")]
        method: Option<String>,
    },
    /// Print the greedy transcript of one WAV file
    Decode {
        #[command(flatten)]
        common: Common,
        /// Model checkpoint
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Audio to transcribe
        #[arg(long, value_name = "PATH")]
        wav: Option<PathBuf>,
    },
    /// Finite-difference check of the tiny model's gradients
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds [default: 5]
        #[arg(long, value_name = "N")]
        seeds: Option<u64>,
    },
}

fn path_value(p: PathBuf) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// File values, then `--set`, then dedicated flags.
fn resolve(common: Common, flags: Vec<(&str, Option<Value>)>) -> Result<RunConfig> {
    let mut overrides = Vec::new();
    for s in &common.set {
        overrides.push(parse_assignment(s)?);
    }
    let shared = [
        ("out", common.out.map(path_value)),
        ("seed", common.seed.map(Value::from)),
        ("threads", common.threads.map(Value::from)),
    ];
    for (k, v) in shared.into_iter().chain(flags) {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    }
    RunConfig::load(common.config.as_deref(), overrides)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => commands::synth(&resolve(common, vec![])?),
        Command::Mix {
            common,
            corpus,
            noise,
            snrs,
        } => commands::mix(&resolve(
            common,
            vec![
                ("paths.corpus", corpus.map(path_value)),
                ("paths.noise", noise.map(path_value)),
                ("mix.snrs", snrs.map(Value::from)),
            ],
        )?),
        Command::Train {
            common,
            mode,
            train,
            dev,
            noise,
            init,
        } => commands::train(&resolve(
            common,
            vec![
                ("train.mode", mode.map(Value::from)),
                ("paths.train", train.map(path_value)),
                ("paths.dev", dev.map(path_value)),
                ("paths.noise", noise.map(path_value)),
                ("paths.init", init.map(path_value)),
            ],
        )?),
        Command::Eval {
            common,
            checkpoint,
            test,
            clean,
            method,
        } => commands::eval(&resolve(
            common,
            vec![
                ("paths.checkpoint", checkpoint.map(path_value)),
                ("paths.test", test.map(path_value)),
                ("paths.clean", clean.map(path_value)),
                ("eval.method", method.map(Value::from)),
            ],
        )?),
        Command::Decode { common, checkpoint, wav } => commands::decode(&resolve(
            common,
            vec![
                ("paths.checkpoint", checkpoint.map(path_value)),
                ("paths.wav", wav.map(path_value)),
            ],
        )?),
        Command::Gradcheck { common, seeds } => {
            commands::gradcheck(&resolve(common, vec![("gradcheck.seeds", seeds.map(Value::from))])?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
