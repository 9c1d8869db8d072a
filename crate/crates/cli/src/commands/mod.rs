//! Subcommand implementations.
//!
//! Every command resolves its configuration, does its work, and writes the
//! resolved config plus its artifacts into the output directory — nothing is
//! written anywhere else, and a run is reproducible from the resolved config
//! alone.

pub mod classify;
pub mod eval;
pub mod gendist;
pub mod gradcam;
pub mod synth;
pub mod train;

use std::path::Path;

use mushroomnet_core::attention::AttentionStrategy;
use mushroomnet_core::element::DType;
use mushroomnet_core::embed::{DistanceMetric, HeadVariant, Normalize};
use mushroomnet_core::genetics::{DistanceModel, GeneticDistanceMatrix};

use crate::{Failure, RunConfig};

pub fn write_resolved_config(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    crate::runio::write_text(&out.join("resolved_config.json"), &cfg.to_json_pretty())
}

pub fn parse_strategy(s: &str) -> Result<AttentionStrategy, Failure> {
    AttentionStrategy::parse(s).ok_or_else(|| {
        Failure::usage(format!(
            "unknown strategy {s:?} (expected model1..model7 or proposed)"
        ))
    })
}

pub fn parse_metric(s: &str) -> Result<DistanceMetric, Failure> {
    DistanceMetric::parse(s)
        .ok_or_else(|| Failure::usage(format!("unknown metric {s:?} (cosine|euclidean)")))
}

pub fn parse_variant(s: &str) -> Result<HeadVariant, Failure> {
    HeadVariant::parse(s).ok_or_else(|| {
        Failure::usage(format!(
            "unknown variant {s:?} (softmax|mse_sum|mse_mean|mae)"
        ))
    })
}

pub fn parse_normalize(s: &str) -> Result<Normalize, Failure> {
    match s {
        "none" => Ok(Normalize::None),
        "minmax" => Ok(Normalize::MinMax),
        other => Err(Failure::usage(format!(
            "unknown normalization {other:?} (none|minmax)"
        ))),
    }
}

pub fn parse_model(s: &str) -> Result<DistanceModel, Failure> {
    DistanceModel::parse(s)
        .ok_or_else(|| Failure::usage(format!("unknown distance model {s:?} (p|jc69|tn93)")))
}

pub fn parse_precision(s: &str) -> Result<DType, Failure> {
    DType::parse(s).ok_or_else(|| Failure::usage(format!("unknown precision {s:?} (f32|f64)")))
}

pub fn load_matrix(path: &Path) -> Result<GeneticDistanceMatrix, Failure> {
    let text = crate::runio::read_text(path)?;
    GeneticDistanceMatrix::from_csv(&text)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}
