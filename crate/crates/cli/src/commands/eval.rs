//! `eval`: confusion matrix CSV, per-class metrics table, and one-vs-rest
//! ROC curves with AUC for a trained checkpoint.

use std::path::Path;

use mushroomnet_core::backbone::{Mode, Model};
use mushroomnet_core::element::{DType, Element};
use mushroomnet_core::eval::{auc, fmt_pct, report_table, roc_csv, roc_curve, ConfusionMatrix};
use mushroomnet_core::train::{split_dataset, stack_batch, Sample, TrainingHead};

use crate::{classify_embed_error, classify_tensor_error, classify_train_error, Failure, RunConfig};

pub fn run(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    let ckpt_path = cfg.checkpoint.clone().expect("checkpoint flag is required");
    let ckpt = crate::runio::load_checkpoint(&ckpt_path)?;
    let precision = ckpt.meta_str("precision").unwrap_or("f32");
    match super::parse_precision(precision)? {
        DType::F32 => run_typed::<f32>(cfg, ckpt, out),
        DType::F64 => run_typed::<f64>(cfg, ckpt, out),
    }
}

/// Per-sample class scores used for ROC curves: softmax probabilities for
/// the classification head, negated label-embedding distances for the
/// distance head (higher score = more class-like either way).
pub fn class_scores<T: Element>(
    model: &mut Model<T>,
    samples: &[Sample<T>],
    head: &TrainingHead<'_>,
    batch_size: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>, Vec<usize>), Failure> {
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    let mut predictions = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let (batch, classes) = stack_batch(&refs).map_err(classify_train_error)?;
        let outputs = model
            .forward(&batch, Mode::Eval)
            .map_err(classify_tensor_error)?;
        let (rows, k) = (chunk.len(), outputs.logits.shape()[1]);
        for row in 0..rows {
            let logits = &outputs.logits.data()[row * k..(row + 1) * k];
            match head {
                TrainingHead::Softmax => {
                    let tensor = mushroomnet_core::tensor::Tensor::from_vec(
                        &[1, k],
                        logits.to_vec(),
                    )
                    .and_then(|t| t.softmax())
                    .map_err(classify_tensor_error)?;
                    scores.push(tensor.data().iter().map(|v| v.to_f64_lossy()).collect());
                }
                TrainingHead::Distance {
                    metric, reference, ..
                } => {
                    let pred: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
                    let (_, le) =
                        mushroomnet_core::embed::classify_by_distance(&pred, reference, *metric)
                            .map_err(classify_embed_error)?;
                    scores.push(le.iter().map(|d| -d).collect());
                }
            }
            let row_scores = scores.last().expect("just pushed");
            let mut best = 0usize;
            for (i, &s) in row_scores.iter().enumerate() {
                if s > row_scores[best] {
                    best = i;
                }
            }
            predictions.push(best);
            truths.push(classes[row]);
        }
    }
    Ok((scores, predictions, truths))
}

fn run_typed<T: Element>(
    cfg: RunConfig,
    ckpt: mushroomnet_core::checkpoint::Checkpoint,
    out: &Path,
) -> Result<(), Failure> {
    let mut model: Model<T> =
        Model::from_checkpoint(&ckpt).map_err(|e| Failure::data(e.to_string()))?;
    let (samples, mut class_names) = super::train::load_samples::<T>(&cfg)?;
    if let Ok(names) = ckpt.meta_str("class_names") {
        let stored: Vec<String> = names.split(';').map(str::to_string).collect();
        if stored.len() == class_names.len() {
            class_names = stored;
        }
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let split = split_dataset(&labels, cfg.split_ratios, cfg.seed, cfg.stratified)
        .map_err(classify_train_error)?;
    let (train, val, test) = split.gather(&samples);
    let subset = match cfg.split.as_str() {
        "test" => test,
        "val" => val,
        "train" => train,
        "all" => samples,
        other => {
            return Err(Failure::usage(format!(
                "unknown split {other:?} (test|val|train|all)"
            )))
        }
    };
    if subset.is_empty() {
        return Err(Failure::data(format!("split {:?} is empty", cfg.split)));
    }

    let head_kind = ckpt.meta_str("head").unwrap_or("classes").to_string();
    let gendist_parts = if head_kind == "gendist" {
        Some(super::train::gendist_head(&cfg, class_names.len())?)
    } else {
        None
    };
    let head = match &gendist_parts {
        Some((targets, reference)) => TrainingHead::Distance {
            targets,
            variant: super::parse_variant(&cfg.variant)?,
            metric: super::parse_metric(&cfg.metric)?,
            reference,
        },
        None => TrainingHead::Softmax,
    };

    let (scores, predictions, truths) =
        class_scores(&mut model, &subset, &head, cfg.batch_size)?;
    let k = class_names.len();
    let cm = ConfusionMatrix::from_pairs(k, truths.iter().copied().zip(predictions))
        .map_err(|e| Failure::data(e.to_string()))?;

    crate::runio::write_text(
        &out.join("confusion.csv"),
        &cm.to_csv(&class_names).map_err(|e| Failure::data(e.to_string()))?,
    )?;
    crate::runio::write_text(
        &out.join("metrics.csv"),
        &report_table(&cm, &class_names).map_err(|e| Failure::data(e.to_string()))?,
    )?;

    let mut auc_rows = String::from("class_id,class,auc\n");
    for c in 0..k {
        let class_scores: Vec<f64> = scores.iter().map(|row| row[c]).collect();
        match roc_curve(&class_scores, &truths, c) {
            Ok(points) => {
                crate::runio::write_text(
                    &out.join(format!("roc_class_{c:02}.csv")),
                    &roc_csv(&points),
                )?;
                auc_rows.push_str(&format!("{},{},{}\n", c + 1, class_names[c], auc(&points)));
            }
            Err(mushroomnet_core::eval::Error::ClassAbsent(_)) => {
                auc_rows.push_str(&format!("{},{},\n", c + 1, class_names[c]));
            }
            Err(e) => return Err(Failure::data(e.to_string())),
        }
    }
    crate::runio::write_text(&out.join("auc.csv"), &auc_rows)?;
    super::write_resolved_config(&cfg, out)?;

    let accuracy = cm.correct() as f64 / cm.total() as f64;
    println!(
        "evaluated {} samples on split {:?}: accuracy {}%, reports under {}",
        cm.total(),
        cfg.split,
        fmt_pct(accuracy),
        out.display()
    );
    Ok(())
}
