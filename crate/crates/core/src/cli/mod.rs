//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2 I/O
//! failure. Log level comes from `DENSECAP_LOG` (`error`, `info`, `debug`).

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{run, TrainOutputs};
pub use config::{DataPaths, GradCheckConfig, ModelPreset, RunConfig};

use crate::datapipe::{Agent, Domain};
use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "densecap", version, about = "Dense video captioning: train, fine-tune, infer and score")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (annotations, features, references).
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        videos: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        #[arg(long, default_value = "wts_normal")]
        domain: Domain,
        #[arg(long, default_value_t = 32)]
        feature_dim: usize,
    },
    /// Build a vocabulary from one domain's captions for one agent.
    BuildVocab {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        domain: Domain,
        #[arg(long)]
        agent: Agent,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame windows for cutting synchronized event clips.
    TrimPlan {
        #[arg(long)]
        annotation: PathBuf,
        /// Write JSON here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one (domain, agent) model.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fine-tune a pretrained checkpoint on another domain.
    Finetune {
        #[arg(long = "from")]
        from: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Dense captions for one feature file or a directory of them.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Output file (single input) or directory.
        #[arg(long)]
        out: PathBuf,
        /// JSON list of {"start_time", "end_time"}: caption these segments.
        #[arg(long)]
        segments: Option<PathBuf>,
        /// Weight of the caption log-probability in ranking.
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Rewrite-rule file; built-in unit rules when absent.
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Score candidate captions against references.
    Evaluate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Metric settings (JSON); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient on the micro model.
    GradCheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Exit code for an error: 2 for filesystem failures, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_io() {
        2
    } else {
        1
    }
}

fn init_logging() {
    let level = std::env::var("DENSECAP_LOG").unwrap_or_else(|_| "info".into());
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
