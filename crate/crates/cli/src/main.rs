//! `contramod`: dataset generation, contrastive pretraining, classifier
//! training, sweeps and evaluation.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use contramod_core::ErrorKind;

/// Bad or missing command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "contramod", version, about = "Semi-supervised modulation classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// key=value file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress progress output on stderr.
    #[arg(long, short)]
    pub quiet: bool,
}

/// Model and training hyperparameters shared by the training subcommands.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// paper or desk.
    #[arg(long)]
    pub profile: Option<String>,
    /// Pretraining epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pretraining batch size (source frames per step).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Pretraining learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub classifier_lr: Option<f64>,
    #[arg(long)]
    pub classifier_batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// none, last_conv or full.
    #[arg(long)]
    pub scope: Option<String>,
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    #[arg(long)]
    pub finetune_max_epochs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// Rotate the supervised baseline's training frames at random.
    #[arg(long)]
    pub supervised_augment: bool,
}

/// Where the labeled frames come from.
#[derive(Args, Debug, Clone, Default)]
pub struct LabelArgs {
    /// Labeled train frames per cell, selected with the run seed.
    #[arg(long)]
    pub n: Option<usize>,
    /// Index file of labeled train frames (overrides --n).
    #[arg(long)]
    pub train_idx: Option<PathBuf>,
    /// Index file of labeled validation frames (overrides --n).
    #[arg(long)]
    pub val_idx: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a labeled dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Comma-separated scheme names (default: all eleven).
        #[arg(long)]
        schemes: Option<String>,
        /// Comma-separated SNRs in dB (default: -20 to 18 step 2).
        #[arg(long, allow_hyphen_values = true)]
        snrs: Option<String>,
        #[arg(long)]
        per_cell: Option<usize>,
        #[arg(long)]
        frame_len: Option<usize>,
        #[arg(long)]
        sps: Option<usize>,
        /// rect or rrc.
        #[arg(long)]
        pulse: Option<String>,
        #[arg(long)]
        rolloff: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tag frames train/val/test per cell.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// train:val:test, default 2:1:1.
        #[arg(long)]
        ratio: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Choose labeled and unlabeled subsets of a split dataset.
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Extra unlabeled frames per cell (default: all remaining).
        #[arg(long)]
        u: Option<usize>,
        /// Prefix for the index files.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contrastive pretraining of encoder and projection head.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Index file of the pretraining pool (default: train split, or all frames).
        #[arg(long)]
        indices: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier on a frozen encoder.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained encoder checkpoint.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune encoder and classifier together.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against the number of labeled frames per cell.
    SweepLabels {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated labeled counts per cell.
        #[arg(long)]
        n: Option<String>,
        /// Comma-separated run seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy against the number of extra unlabeled frames per cell.
    SweepUnlabeled {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated unlabeled counts per cell.
        #[arg(long)]
        u: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Index file of frames to score (default: test split, or all frames).
        #[arg(long)]
        indices: Option<PathBuf>,
        /// Report path; .csv or .json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// csv or json, overriding the extension.
        #[arg(long)]
        format: Option<String>,
    },
    /// Print a metrics report, optionally converting its format.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<contramod_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen { common, schemes, snrs, per_cell, frame_len, sps, pulse, rolloff, out } => {
            commands::gen(&common, commands::GenArgs { schemes, snrs, per_cell, frame_len, sps, pulse, rolloff, out })
        }
        Command::Split { common, data, ratio, out } => commands::split(&common, data, ratio, out),
        Command::Select { common, data, n, u, out } => commands::select(&common, data, n, u, out),
        Command::Pretrain { common, train, data, indices, out } => commands::pretrain(&common, &train, data, indices, out),
        Command::Train { common, train, labels, data, encoder, out } => {
            commands::train(&common, &train, &labels, data, encoder, out)
        }
        Command::Finetune { common, train, labels, data, model, out } => {
            commands::finetune(&common, &train, &labels, data, model, out)
        }
        Command::SweepLabels { common, train, data, n, seeds, jobs, out } => {
            commands::sweep_labels(&common, &train, data, n, seeds, jobs, out)
        }
        Command::SweepUnlabeled { common, train, data, n, u, seeds, jobs, out } => {
            commands::sweep_unlabeled(&common, &train, data, n, u, seeds, jobs, out)
        }
        Command::Eval { common, model, data, indices, out, format } => {
            commands::eval(&common, model, data, indices, out, format)
        }
        Command::Report { common, input, out, format } => commands::report(&common, input, out, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
