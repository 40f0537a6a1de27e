//! `semi3d`: dataset splits, self-training runs, evaluation, synthetic
//! corpora and augmentation inspection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "semi3d", version, about = "Semi-supervised 3D detection self-training")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Continue from the last complete checkpoint.
    #[arg(long, global = true)]
    resume: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a dataset into labeled and unlabeled sequences.
    Split {
        /// Dataset root in KITTI layout.
        #[arg(long)]
        dataset: PathBuf,
        /// Target labeled fraction, in (0, 1).
        #[arg(long)]
        ratio: f64,
        /// `scene_id sequence_id` lines; defaults to `<dataset>/sequences.txt`.
        #[arg(long)]
        sequences: Option<PathBuf>,
        /// Block length used when no sequence mapping exists.
        #[arg(long, default_value_t = 10)]
        block_len: usize,
    },
    /// Run the self-training loop described by --config.
    Selftrain,
    /// Score predictions against ground truth.
    Eval {
        /// Dataset root holding `label_2` (and optionally `calib`).
        #[arg(long)]
        gt: PathBuf,
        /// Directory of prediction label files with scores.
        #[arg(long)]
        pred: PathBuf,
    },
    /// Generate a synthetic corpus in KITTI layout.
    Synth {
        /// Scene count when no --config is given.
        #[arg(long, default_value_t = 100)]
        scenes: usize,
    },
    /// Augment one scene and write it with its provenance.
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        /// Scene id, e.g. `000042`.
        #[arg(long)]
        scene: String,
        /// Dataset whose labels fill the paste database; defaults to --dataset.
        #[arg(long)]
        db: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let g = &cli.global;
    let result = match cli.command {
        Command::Split { dataset, ratio, sequences, block_len } => {
            commands::split(g, &dataset, ratio, sequences.as_deref(), block_len)
        }
        Command::Selftrain => commands::selftrain(g),
        Command::Eval { gt, pred } => commands::eval(g, &gt, &pred),
        Command::Synth { scenes } => commands::synth(g, scenes),
        Command::Augment { dataset, scene, db } => commands::augment(g, &dataset, &scene, db.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
