mod commands;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Interpretable difficulty estimation for piano scores.
#[derive(Debug, Parser)]
#[command(name = "rubricnet", version, about)]
pub struct Cli {
    /// Seed for fold assignment, search and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output format where a command supports several.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Markdown,
    Html,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Ordinal,
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthModeArg {
    Score,
    Feature,
}

/// Where labeled training data comes from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory of `<id>.json` / `<id>.musicxml` scores.
    #[arg(long, requires = "labels", conflicts_with = "features")]
    pub scores: Option<PathBuf>,
    /// Labels CSV (`id,level[,fold]`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Feature CSV written by `extract` (labels taken from it).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Number of difficulty levels.
    #[arg(long, default_value_t = 9)]
    pub k: u32,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Random-search trials per model.
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    #[arg(long, default_value_t = 300)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 30)]
    pub patience: usize,
    #[arg(long, value_enum, default_value_t = HeadArg::Ordinal)]
    pub head: HeadArg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the 12-descriptor feature table of a corpus.
    Extract {
        #[arg(long)]
        scores: PathBuf,
        /// Labels CSV; without it every score file in the directory is used, unlabeled.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        k: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model: folds other than `--val-fold` train, `--val-fold` validates.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long, default_value_t = 0)]
        val_fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Five-fold cross-validation with per-fold hyperparameter search.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the level of each score.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Expected number of levels; checked against the checkpoint.
        #[arg(long)]
        k: Option<u32>,
        #[arg(required = true)]
        pieces: Vec<PathBuf>,
    },
    /// Render the rubric of one score.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-grade statistics written by `train` or `evaluate`.
        #[arg(long)]
        stats: PathBuf,
        piece: PathBuf,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation table, descriptor clustering and grade contributions.
    Analyze {
        #[arg(long)]
        features: PathBuf,
        /// Checkpoint(s) applied to every row for the contribution profile.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// `evaluate` output; each fold's checkpoint is applied to its test pieces.
        #[arg(long, conflicts_with = "checkpoint")]
        cv_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 9)]
        k: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        k: u32,
        #[arg(long, default_value_t = 60)]
        n_per_class: usize,
        #[arg(long, default_value_t = rubricnet::synth::DEFAULT_NOISE)]
        noise: f64,
        #[arg(long, value_enum, default_value_t = SynthModeArg::Score)]
        mode: SynthModeArg,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
