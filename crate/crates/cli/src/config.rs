//! Run configuration: one JSON document whose keys mirror the CLI flags.
//!
//! Resolution order: built-in defaults, then the `--config` file, then
//! explicit flags. Every run writes the fully resolved configuration into
//! its output directory so it can be reproduced from that file alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand that produced this resolved config.
    pub command: String,
    /// Dataset directory (one subdirectory per class).
    pub data: Option<PathBuf>,
    /// Synthetic dataset spec "CLASSESxPER_CLASS", e.g. "3x50".
    pub synthetic: Option<String>,

    // network
    pub alpha: f64,
    pub resolution: usize,
    pub strategy: String,
    pub se_reduction: usize,
    pub eca_kernel: usize,
    pub first_bneck_exp: usize,

    // training
    pub stage: u8,
    pub head: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: String,
    pub augment: bool,
    pub split_ratios: [f64; 3],
    pub stratified: bool,
    pub init_from: Option<PathBuf>,

    // genetic-distance head
    pub matrix: Option<PathBuf>,
    pub variant: String,
    pub metric: String,
    pub diag: Option<f64>,
    pub normalize: String,
    pub drop: Option<String>,

    // gendist compute
    pub fasta: Option<PathBuf>,
    pub model: String,
    pub bootstrap: Option<usize>,

    // evaluation / interpretation
    pub split: String,
    pub checkpoint: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub class: Option<usize>,
    pub cam_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            data: None,
            synthetic: None,
            alpha: 0.25,
            resolution: 32,
            strategy: "proposed".into(),
            se_reduction: 16,
            eca_kernel: 5,
            first_bneck_exp: 6,
            stage: 2,
            head: "classes".into(),
            learning_rate: 1e-4,
            batch_size: 12,
            epochs: 30,
            seed: 0,
            precision: "f32".into(),
            augment: false,
            split_ratios: [0.8, 0.1, 0.1],
            stratified: true,
            init_from: None,
            matrix: None,
            variant: "mse_sum".into(),
            metric: "cosine".into(),
            diag: None,
            normalize: "none".into(),
            drop: None,
            fasta: None,
            model: "tn93".into(),
            bootstrap: None,
            split: "test".into(),
            checkpoint: None,
            image: None,
            class: None,
            cam_alpha: 0.5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::data(format!("bad config {}: {e}", path.display())))
    }

    pub fn from_file_or_default(path: Option<&PathBuf>) -> Result<Self, Failure> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Parse "CLASSESxPER_CLASS".
    pub fn synthetic_spec(&self) -> Result<Option<(usize, usize)>, Failure> {
        match &self.synthetic {
            None => Ok(None),
            Some(s) => {
                let (a, b) = s
                    .split_once(['x', 'X'])
                    .ok_or_else(|| Failure::usage(format!("bad synthetic spec {s:?}, expected CLASSESxPER_CLASS")))?;
                let classes = a
                    .trim()
                    .parse()
                    .map_err(|_| Failure::usage(format!("bad class count in {s:?}")))?;
                let per_class = b
                    .trim()
                    .parse()
                    .map_err(|_| Failure::usage(format!("bad per-class count in {s:?}")))?;
                Ok(Some((classes, per_class)))
            }
        }
    }
}
