//! `sparsepose`: generate synthetic scenes, train, evaluate, run ablations,
//! check gradients and plot cameras.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data or I/O error,
//! 3 numeric failure. Every failure also prints an `error_code=N` line on
//! standard error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsepose::Error;

#[derive(Debug, Parser)]
#[command(name = "sparsepose", version, about = "Sparse-view camera pose regression and refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Preset, config file and `key=value` overrides, applied in that order.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Base preset: default, smoke, tiny or paper-scale.
    #[arg(long)]
    preset: Option<String>,
    /// Flat `key = value` config file; a leading `preset = NAME` picks the base.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set model.num_points=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic scenes to bundle directories (poses.csv, PPM views, meta).
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Category split to draw objects from.
        #[arg(long, default_value = "test", value_parser = ["train", "test"])]
        split: String,
        /// Fixed view count; drawn per scene from the data config when absent.
        #[arg(long)]
        views: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model; writes checkpoint.sppz and metrics.csv to --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint (its stored config wins except for `steps`).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Shorthand for `--set seed=S`, applied last.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint (or a freshly initialized model from --config)
    /// on scene bundles or on a generated held-out set.
    Eval {
        #[arg(long, conflicts_with_all = ["preset", "config", "overrides"])]
        ckpt: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of scene bundles; a held-out set is generated when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// View counts of the generated held-out set.
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,9")]
        counts: Vec<usize>,
        /// Generated scenes per view count.
        #[arg(long, default_value_t = 50)]
        per_count: usize,
        /// Least-squares scale alignment of predicted translations.
        #[arg(long)]
        sim_align: bool,
        /// Compare camera centers instead of translation vectors.
        #[arg(long)]
        camera_centers: bool,
        /// Camera plots for this many scenes.
        #[arg(long, default_value_t = 4)]
        plots: usize,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Seed of the held-out set and the probe points.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict poses for a directory of PPM images.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of `.ppm` views; the first in name order is the reference camera.
        #[arg(long)]
        images: PathBuf,
        /// CSV `frame_id,fx,fy,cx,cy`, one row per image stem.
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate ablation variants with shared data and seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated: init-only, no-resample, mlp, no-posenc, rgb,
        /// no-robust, lstm-steps-{0,1,5,10,50}; `paper` expands to the six
        /// single-component ablations plus lstm-steps-{0,1,5,10}.
        #[arg(long, default_value = "paper")]
        variants: String,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finite-difference check of every op, layer, loss and the tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Plot camera centers of two pose files.
    Plot {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Accepted for uniformity; plotting is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Failure categories mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Usage(msg),
            Error::NanLoss(_) | Error::NanGradient(_) | Error::NonFiniteResidual(_) => Failure::Numeric(msg),
            _ => Failure::Data(msg),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            eprintln!("error_code=1 kind=usage");
            return ExitCode::from(1);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            eprintln!("error_code={} kind={}", f.code(), f.kind());
            ExitCode::from(f.code())
        }
    }
}
