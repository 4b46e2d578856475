//! Command-line front end: label generation, training, inference,
//! evaluation, benchmarking and self-verification.
//!
//! Exit codes: 0 success, 1 validation failure, 2 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::CliError;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "spotlight", about = "Spotlight text detector pipeline", version)]
struct Cli {
    /// Config file of key=value lines with section prefixes (model.gamma=0.4).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Inline config override, repeatable; applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate kernel label masks plus a summary from annotations.
    Labelgen {
        annotations_dir: PathBuf,
        images_dir: PathBuf,
        out_dir: PathBuf,
    },
    /// Train a model and write a checkpoint plus a loss curve file.
    Train {
        out_checkpoint: PathBuf,
        /// Directory holding paired image and .txt annotation files.
        #[arg(long, value_name = "DIR", conflicts_with = "synthetic")]
        data_dir: Option<PathBuf>,
        /// Train on the built-in synthetic dataset.
        #[arg(long)]
        synthetic: bool,
        /// Overrides train.seed (model init and shuffling).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.epochs; 0 saves the initialized model untouched.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run inference and write one detection file per image.
    Infer {
        checkpoint: PathBuf,
        out_dir: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
        /// Also write an overlay image with detection outlines.
        #[arg(long)]
        overlay: bool,
        /// Overrides io.short_side for the resize.
        #[arg(long, value_name = "N")]
        short_side: Option<usize>,
    },
    /// Score detection files against ground-truth annotations.
    Eval {
        det_dir: PathBuf,
        gt_dir: PathBuf,
        /// IoU threshold for a match.
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Directory for report.txt and report.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Report per-block MACs/parameters and forward timing.
    Bench {
        /// Measure this checkpoint instead of a freshly initialized model.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Square input side, a multiple of 32.
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 3)]
        iters: usize,
    },
    /// Run the built-in oracle suite and print its pass/fail table.
    Verify,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    }
    cfg.apply_sets(&cli.set).map_err(CliError::Validation)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Labelgen { annotations_dir, images_dir, out_dir } => {
            commands::cmd_labelgen(&annotations_dir, &images_dir, &out_dir, &cfg)
        }
        Command::Train { out_checkpoint, data_dir, synthetic, seed, epochs } => {
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            if let Some(epochs) = epochs {
                cfg.train.epochs = epochs;
            }
            commands::cmd_train(&cfg, data_dir.as_deref(), synthetic, &out_checkpoint)
        }
        Command::Infer { checkpoint, out_dir, images, overlay, short_side } => {
            if let Some(side) = short_side {
                cfg.io.short_side = side;
            }
            if cfg.io.short_side == 0 {
                return Err(CliError::Validation("--short-side must be positive".into()));
            }
            commands::cmd_infer(&cfg, &checkpoint, &images, &out_dir, overlay)
        }
        Command::Eval { det_dir, gt_dir, iou, out } => {
            commands::cmd_eval(&det_dir, &gt_dir, iou, out.as_deref())
        }
        Command::Bench { checkpoint, size, warmup, iters } => {
            commands::cmd_bench(&cfg, checkpoint.as_deref(), size, warmup, iters)
        }
        Command::Verify => commands::cmd_verify(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let kind = e.kind();
            let _ = e.print();
            return match kind {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
