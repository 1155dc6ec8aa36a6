//! `lanetopo` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod failure;
mod plot;

#[derive(Parser, Debug)]
#[command(name = "lanetopo", version, about = "Synthetic lane-topology experiments")]
pub struct Cli {
    /// Flat `section.key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr=0.01`. Applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Base seed for generation and perturbation; also overrides `train.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-scene work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic scenes as `scene_{seed}_{i}.json`.
    Gen {
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Turn ground-truth scenes into detector-like predictions with the noise model.
    Perturb {
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Train a model; writes `checkpoint.json` and `loss_curve.csv`.
    Train {
        #[arg(long)]
        scenes: PathBuf,
    },
    /// Run a checkpoint on scenes; writes one prediction file per scene.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Also write every decoder layer's predictions under `layers/`.
        #[arg(long)]
        all_layers: bool,
    },
    /// Snap clustered lane endpoints onto detected points.
    Refine(RefineArgs),
    /// Score predictions against scenes; writes `report.json`, `report.csv` and `summary.md`.
    Eval {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// A second prediction directory to compare against, e.g. unrefined predictions.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Write SVG precision-recall curves and the endpoint-gap histogram.
        #[arg(long)]
        plots: bool,
    },
    /// Check the reference OLS table and time the main kernels.
    Bench {
        /// Fewer timing iterations.
        #[arg(long)]
        quick: bool,
    },
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub tau_p: Option<f64>,
    #[arg(long)]
    pub tau_l: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
