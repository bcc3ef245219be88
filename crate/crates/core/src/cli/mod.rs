//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data or I/O error,
//! 3 numerical failure.

mod commands;
mod config;

pub use self::commands::{pretrain, probe, select_debug, ProbeOptions, SelectDebugReport};
pub use self::config::{DatasetSpec, RunConfigFile};

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::eval::EncoderSource;

#[derive(Debug, Parser)]
#[command(
    name = "lfr",
    version,
    about = "Self-supervised pretraining against frozen random projectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    /// The pretrained encoder from the checkpoint.
    Lfr,
    /// The checkpoint's architecture with fresh random parameters.
    RandomInit,
    /// No encoder: probe the preprocessed input features.
    Raw,
}

impl From<EncoderArg> for EncoderSource {
    fn from(a: EncoderArg) -> Self {
        match a {
            EncoderArg::Lfr => EncoderSource::Lfr,
            EncoderArg::RandomInit => EncoderSource::RandomInit,
            EncoderArg::Raw => EncoderSource::RawFeatures,
        }
    }
}

/// Flags override values from the config file, which override defaults.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select projectors, train the encoder and write a checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit a logistic-regression probe on frozen representations.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "lfr")]
        encoder: EncoderArg,
        /// Number of probe seeds; the report gives mean and std.
        #[arg(long)]
        seeds: Option<usize>,
        /// First probe seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; defaults to `eval_<encoder>.json` next to the checkpoint.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate candidates, run selection and compare with exhaustive search.
    SelectDebug {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        projectors: Option<usize>,
        /// Also write the report as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a config file with every default filled in.
    Defaults,
}

fn run(cli: Cli) -> crate::Result<()> {
    match cli.command {
        Command::Pretrain {
            config,
            output_dir,
            seed,
            epochs,
        } => {
            let mut cfg = RunConfigFile::load(&config)?;
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.train_epochs = e;
            }
            pretrain(&cfg).map(|_| ())
        }
        Command::Probe {
            checkpoint,
            config,
            encoder,
            seeds,
            seed,
            output,
        } => {
            let mut cfg = RunConfigFile::load(&config)?;
            if let Some(n) = seeds {
                cfg.probe.seeds = n;
            }
            if let Some(s) = seed {
                cfg.probe.seed = s;
            }
            let opts = ProbeOptions {
                checkpoint,
                source: encoder.into(),
                output,
            };
            let report = probe(&cfg, &opts)?;
            println!(
                "accuracy: {:.4} ± {:.4} over {} seed(s)",
                report.mean_accuracy,
                report.std_accuracy,
                report.runs.len()
            );
            Ok(())
        }
        Command::SelectDebug {
            config,
            candidates,
            projectors,
            output,
        } => {
            let mut cfg = RunConfigFile::load(&config)?;
            if let Some(n) = candidates {
                cfg.train.candidates = Some(n);
            }
            if let Some(k) = projectors {
                cfg.train.projectors = k;
            }
            let report = select_debug(&cfg)?;
            print!("{}", report.render());
            if let Some(path) = output {
                std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(())
        }
        Command::Defaults => {
            println!("{}", RunConfigFile::default().effective().to_json()?);
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
