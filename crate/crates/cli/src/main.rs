use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use admmq_core::{Checkpoint, Error};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;

use config::RunConfig;

/// Progressive ADMM quantization of small convolutional networks.
#[derive(Parser)]
#[command(name = "admmq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the reference configuration with every default filled in.
    Config,
    /// Train the full-precision baseline.
    Pretrain {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory for the checkpoint and summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize a baseline checkpoint.
    Quantize {
        #[command(flatten)]
        run: RunArgs,
        /// Baseline checkpoint directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory for the checkpoint, trace and summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Test accuracy and level histograms of a checkpoint.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write the bit-packed weights of a quantized checkpoint.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Packed output file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; defaults are used for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the MNIST directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self, fallback: Option<&serde_json::Value>) -> Result<RunConfig, Error> {
        let mut config = match (&self.config, fallback) {
            (Some(path), _) => RunConfig::from_file(path)?,
            (None, Some(snapshot)) => serde_json::from_value(snapshot.clone())
                .map_err(|e| Error::Config(format!("checkpoint config snapshot: {e}")))?,
            (None, None) => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(dir) = &self.dataset {
            config.set_dataset_dir(dir.clone())?;
        }
        config.validate()?;
        Ok(config)
    }
}

fn output_dir(flag: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, Error> {
    flag.or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn print<T: Serialize>(value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Config => print(&RunConfig::default()),
        Command::Pretrain { run, out } => {
            let config = run.load(None)?;
            let out = output_dir(out, &config)?;
            let summary = commands::pretrain(&config, &out)?;
            log::info!("checkpoint written to {}", out.display());
            println!(
                "validation accuracy {:.4}, test accuracy {:.4}",
                summary.validation_accuracy, summary.test_accuracy
            );
            Ok(())
        }
        Command::Quantize {
            run,
            checkpoint,
            out,
        } => {
            let config = run.load(None)?;
            let out = output_dir(out, &config)?;
            let summary = commands::quantize(&config, &checkpoint, &out)?;
            println!(
                "baseline test accuracy {:.4}, quantized test accuracy {:.4}, {:.3} bits per weight",
                summary.baseline_test_accuracy, summary.test_accuracy, summary.effective_bits_per_weight
            );
            Ok(())
        }
        Command::Evaluate { run, checkpoint } => {
            let ck = load_checkpoint(&checkpoint)?;
            let config = run.load(Some(&ck.manifest.config))?;
            print(&commands::evaluate_checkpoint(&config, &ck)?)
        }
        Command::Export { checkpoint, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            print(&commands::export(&ck, &out)?)
        }
    }
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint, Error> {
    Checkpoint::load(dir).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", dir.display())),
        Error::Json(err) => {
            Error::Checkpoint(format!("{}: unreadable manifest: {err}", dir.display()))
        }
        other => other,
    })
}

fn exit_code(e: &Error) -> u8 {
    if e.is_divergence() {
        3
    } else if matches!(e, Error::Config(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ADMMQ_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
