//! The `gameon` command-line tool.
//!
//! Machine-readable results go to standard output as JSON; progress and
//! errors go to standard error. Exit codes: 0 success, 1 invalid input or
//! configuration, 2 I/O failure, 3 numeric failure (including a failed
//! gradient check).

mod ablate;
mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gameon_core::{Error, ErrorClass};
use serde_json::Value;

pub use ablate::{ablation_tsv, run_ablation, run_ablation_on, AblationRow};
pub use commands::{params_report, GRADCHECK_ENTRIES_PER_TENSOR, GRADCHECK_TOLERANCE};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "gameon", version, about = "Graph-attention multimodal fusion for fake news classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant and write its checkpoint and history.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// game-on (full), gcn, concat, text or visual.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Build graphs without self-loops.
        #[arg(long)]
        no_self_loops: bool,
    },
    /// Print metrics of a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also report precision, recall and F1 with each class as positive.
        #[arg(long)]
        metrics_per_class: bool,
    },
    /// Train and test all five variants under one seed.
    Ablate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare model gradients against central differences (64-bit).
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print per-tensor and total trainable parameter counts.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a synthetic dataset of feature bundles and a manifest.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n: usize,
        /// separable or crossmodal.
        #[arg(long, default_value = "separable")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure of a command, carrying its exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("gradient check failed: max relative error {error:e} in {tensor} (tolerance {tolerance:e})")]
    GradCheck {
        error: f64,
        tensor: String,
        tolerance: f64,
        report: Value,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Validation => 1,
                ErrorClass::Io => 2,
                ErrorClass::Numeric => 3,
            },
            CliError::GradCheck { .. } => 3,
        }
    }
}

/// Runs a parsed command and returns its JSON result.
pub fn execute(cli: Cli) -> Result<Value, CliError> {
    match cli.command {
        Command::Train { manifest, config, out, variant, seed, no_self_loops } => {
            commands::train(manifest, config, out, variant, seed, no_self_loops)
        }
        Command::Eval { checkpoint, manifest, split, metrics_per_class } => {
            commands::eval(&checkpoint, &manifest, &split, metrics_per_class)
        }
        Command::Ablate { manifest, config, out, seed } => commands::ablate(manifest, config, out, seed),
        Command::Gradcheck { config, seed, inject_fault } => commands::gradcheck(config, seed, inject_fault),
        Command::Params { config } => commands::params(config),
        Command::Synth { seed, n, mode, out } => commands::synth(seed, n, &mode, &out),
    }
}

/// Parses arguments, runs the command, prints its output and returns the
/// process exit code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli) {
        Ok(value) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&value).expect("JSON output"));
            0
        }
        Err(e) => {
            if let CliError::GradCheck { report, .. } = &e {
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(report).expect("JSON output"));
            }
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
