//! Command-line pipeline: synthetic data, staged training, evaluation
//! reports, activation heatmaps, genetic distances, and distance-based
//! classification.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure. Failures print one machine-parseable line on standard error:
//! `mushroomnet: error[<kind>]: <message>`.

mod commands;
mod config;
mod runio;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

/// Failure classified for the exit code contract.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Failure::Numeric(msg.into())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data(_) => "data",
            Failure::Numeric(_) => "numeric",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

/// Map core errors onto the exit-code classification: non-finite numerics
/// are their own class, everything else is a data problem.
pub fn classify_tensor_error(e: mushroomnet_core::tensor::Error) -> Failure {
    match e {
        mushroomnet_core::tensor::Error::NonFinite { .. } => Failure::numeric(e.to_string()),
        other => Failure::data(other.to_string()),
    }
}

pub fn classify_train_error(e: mushroomnet_core::train::Error) -> Failure {
    match e {
        mushroomnet_core::train::Error::Tensor(t) => classify_tensor_error(t),
        mushroomnet_core::train::Error::Embed(em) => classify_embed_error(em),
        other => Failure::data(other.to_string()),
    }
}

pub fn classify_embed_error(e: mushroomnet_core::embed::Error) -> Failure {
    match e {
        mushroomnet_core::embed::Error::Tensor(t) => classify_tensor_error(t),
        other => Failure::data(other.to_string()),
    }
}

pub fn classify_interpret_error(e: mushroomnet_core::interpret::Error) -> Failure {
    match e {
        mushroomnet_core::interpret::Error::Tensor(t) => classify_tensor_error(t),
        other => Failure::data(other.to_string()),
    }
}

#[derive(Parser)]
#[command(
    name = "mushroomnet",
    about = "Attention-augmented lightweight CNN with genetic-distance representation learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (all files are written under it)
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic class-per-directory dataset
    SynthData {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of classes [default: 3]
        #[arg(long)]
        classes: Option<usize>,
        /// Images per class [default: 50]
        #[arg(long)]
        per_class: Option<usize>,
        /// Image resolution [default: 32]
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Train a model (stage 2: full fine-tune; stage 3: freeze all but the
    /// last convolution, head, and attention blocks)
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory (one subdirectory per class)
        #[arg(long)]
        data: Option<PathBuf>,
        /// In-memory synthetic dataset CLASSESxPER_CLASS, e.g. 3x50
        #[arg(long)]
        synthetic: Option<String>,
        /// Training stage
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        stage: Option<u8>,
        /// Attention strategy: model1..model7 or proposed
        #[arg(long)]
        strategy: Option<String>,
        /// Head: classes (softmax) or gendist (distance regression)
        #[arg(long)]
        head: Option<String>,
        /// Loss variant for the gendist head: softmax|mse_sum|mse_mean|mae
        #[arg(long)]
        variant: Option<String>,
        /// Label-embedding metric: cosine|euclidean
        #[arg(long)]
        metric: Option<String>,
        /// Genetic distance matrix CSV (gendist head)
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Diagonal override for the training targets, e.g. -1
        #[arg(long, allow_hyphen_values = true)]
        diag: Option<f64>,
        /// Target normalization: none|minmax
        #[arg(long)]
        normalize: Option<String>,
        /// Species to drop from the matrix before training
        #[arg(long)]
        drop: Option<String>,
        /// Width multiplier in (0, 1]
        #[arg(long)]
        alpha: Option<f64>,
        /// Input resolution
        #[arg(long)]
        resolution: Option<usize>,
        /// Epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Batch size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Learning rate
        #[arg(long)]
        lr: Option<f64>,
        /// Element precision: f32|f64
        #[arg(long)]
        precision: Option<String>,
        /// Random per-epoch augmentation
        #[arg(long)]
        augment: bool,
        /// Checkpoint to initialize from (stage-1 transfer, or the stage-2
        /// result when training stage 3)
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: confusion matrix, metrics table, ROC curves
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// In-memory synthetic dataset CLASSESxPER_CLASS
        #[arg(long)]
        synthetic: Option<String>,
        /// Which split to evaluate: test|val|train|all
        #[arg(long)]
        split: Option<String>,
        /// Genetic distance matrix CSV (for gendist-head checkpoints)
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        metric: Option<String>,
    },
    /// Class activation heatmap and overlay for one image
    Gradcam {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Target class index; argmax of the prediction when omitted
        #[arg(long)]
        class: Option<usize>,
        /// Overlay blend factor in [0, 1]
        #[arg(long)]
        cam_alpha: Option<f64>,
    },
    /// Genetic distance matrices and embedding targets
    Gendist {
        #[command(subcommand)]
        action: GendistAction,
    },
    /// Classify images by label embedding against a distance matrix
    Classify {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Diagonal-zero reference matrix CSV
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        metric: Option<String>,
        /// Single image to classify
        #[arg(long)]
        image: Option<PathBuf>,
        /// Dataset directory to classify
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GendistAction {
    /// Distance matrix (and optional bootstrap uncertainty) from aligned FASTA
    Compute {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        fasta: PathBuf,
        /// Substitution model: p|jc69|tn93
        #[arg(long)]
        model: Option<String>,
        /// Bootstrap replicate count (writes a standard-deviation matrix)
        #[arg(long)]
        bootstrap: Option<usize>,
    },
    /// Embedding targets from a matrix CSV
    Targets {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        matrix: PathBuf,
        /// Diagonal override, e.g. -1
        #[arg(long, allow_hyphen_values = true)]
        diag: Option<f64>,
        /// none|minmax
        #[arg(long)]
        normalize: Option<String>,
        /// Species to drop
        #[arg(long)]
        drop: Option<String>,
    },
}

/// Copy each `Some(flag)` into the config field of the same name.
macro_rules! merge {
    ($cfg:ident: $($field:ident),* $(,)?) => {
        $(if let Some(v) = $field { $cfg.$field = merge!(@wrap $cfg.$field, v); })*
    };
    (@wrap $target:expr, $v:expr) => {{
        #[allow(clippy::useless_conversion)]
        fn pick<T, U: Into<T>>(_current: &T, v: U) -> T { v.into() }
        pick(&$target, $v)
    }};
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!(
                "mushroomnet: error[{}]: {}",
                failure.kind(),
                failure.message().replace('\n', " ")
            );
            failure.exit_code()
        }
    };
    std::process::exit(code);
}

fn run() -> Result<(), Failure> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(Failure::usage(e.to_string())),
    };
    match cli.command {
        Command::SynthData {
            common,
            classes,
            per_class,
            resolution,
        } => commands::synth::run(common, classes, per_class, resolution),
        Command::Train {
            common,
            data,
            synthetic,
            stage,
            strategy,
            head,
            variant,
            metric,
            matrix,
            diag,
            normalize,
            drop,
            alpha,
            resolution,
            epochs,
            batch_size,
            lr,
            precision,
            augment,
            init_from,
        } => {
            let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
            cfg.command = "train".into();
            merge!(cfg: data, synthetic, stage, strategy, head, variant, metric, matrix,
                   diag, normalize, drop, alpha, resolution, epochs, batch_size, precision, init_from);
            if let Some(v) = lr {
                cfg.learning_rate = v;
            }
            if augment {
                cfg.augment = true;
            }
            if let Some(v) = common.seed {
                cfg.seed = v;
            }
            commands::train::run(cfg, &common.out)
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            synthetic,
            split,
            matrix,
            metric,
        } => {
            let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
            cfg.command = "eval".into();
            cfg.checkpoint = Some(checkpoint);
            merge!(cfg: data, synthetic, split, matrix, metric);
            if let Some(v) = common.seed {
                cfg.seed = v;
            }
            commands::eval::run(cfg, &common.out)
        }
        Command::Gradcam {
            common,
            checkpoint,
            image,
            class,
            cam_alpha,
        } => {
            let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
            cfg.command = "gradcam".into();
            cfg.checkpoint = Some(checkpoint);
            cfg.image = Some(image);
            if class.is_some() {
                cfg.class = class;
            }
            if let Some(v) = cam_alpha {
                cfg.cam_alpha = v;
            }
            commands::gradcam::run(cfg, &common.out)
        }
        Command::Gendist { action } => match action {
            GendistAction::Compute {
                common,
                fasta,
                model,
                bootstrap,
            } => {
                let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
                cfg.command = "gendist-compute".into();
                cfg.fasta = Some(fasta);
                merge!(cfg: model, bootstrap);
                if let Some(v) = common.seed {
                    cfg.seed = v;
                }
                commands::gendist::compute(cfg, &common.out)
            }
            GendistAction::Targets {
                common,
                matrix,
                diag,
                normalize,
                drop,
            } => {
                let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
                cfg.command = "gendist-targets".into();
                cfg.matrix = Some(matrix);
                merge!(cfg: diag, normalize, drop);
                commands::gendist::targets(cfg, &common.out)
            }
        },
        Command::Classify {
            common,
            checkpoint,
            matrix,
            metric,
            image,
            data,
        } => {
            let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
            cfg.command = "classify".into();
            cfg.checkpoint = Some(checkpoint);
            cfg.matrix = Some(matrix);
            merge!(cfg: metric, image, data);
            commands::classify::run(cfg, &common.out)
        }
    }
}

