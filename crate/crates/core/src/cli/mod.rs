//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 unreadable or invalid input,
//! 3 training divergence, 4 enumeration budget exceeded, 5 checkpoint and
//! config disagree, 6 model too large for gradient checking.

mod commands;
mod config;
mod heatmap;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_diagnose, cmd_gradcheck, cmd_heatmap, cmd_train, load_discrete_model, sample_heatmap, CheckLine,
    GRADCHECK_MAX_PARAMS, GRADCHECK_STEP, GRADCHECK_TOL,
};
pub use config::{sha256_hex, ExperimentConfig, LossSection, TaskSection, TrainSection};
pub use heatmap::{grey_level, Heatmap};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;
pub const EXIT_OVERSIZE: i32 = 6;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Capacity(_) => EXIT_BUDGET,
        Error::Mismatch(_) => EXIT_MISMATCH,
        Error::Oversize(_) => EXIT_OVERSIZE,
        _ => EXIT_PARSE,
    }
}

#[derive(Parser, Debug)]
#[command(name = "vista", version, about = "Toy multimodal alignment experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write metrics.jsonl, final.ckpt and manifest.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact information curve of a discrete caption model.
    Diagnose {
        /// Builtin name (iid-uniform, strong-memory, copy-channel) or TOML path.
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 8)]
        horizon: usize,
        #[arg(long, default_value_t = crate::infotheory::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Text-by-image cosine similarity map of one sampled example.
    Heatmap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Experiment file supplying the task; must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference check of the total-loss gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out).map(|()| true),
        Command::Diagnose { model, horizon, epsilon, out } => {
            cmd_diagnose(&model, horizon, epsilon, &out).map(|l| commands::report(&l))
        }
        Command::Heatmap { ckpt, seed, out, config } => cmd_heatmap(&ckpt, seed, &out, config.as_deref()).map(|_| true),
        Command::Gradcheck { config, corrupt_backward } => {
            cmd_gradcheck(&config, corrupt_backward).map(|l| commands::report(&l))
        }
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_CHECK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests;
