//! Dataset splitting and the staged training procedure with layer freezing.
//!
//! Stages follow the transfer-learning recipe: stage 1 initializes from a
//! checkpoint (or from scratch at desk scale), stage 2 fine-tunes the whole
//! backbone with a replaced classification head, stage 3 freezes everything
//! except the last convolution, the head, and the attention blocks, training
//! those from scratch. The best-validation parameters are retained.
//!
//! Everything is seed-deterministic: splits, per-epoch shuffles, parameter
//! initialization, and therefore the epoch log.

mod adam;
mod augment;
mod synth;

pub use adam::{Adam, AdamConfig};
pub use augment::{augment, sample_augment, AugmentOp, AugmentRanges};
pub use synth::generate_synthetic_dataset;

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{stage3_trainable, LayerSpec, Mode, Model};
use crate::element::Element;
use crate::embed::{
    classify_by_distance, head_loss, DistanceMetric, EmbeddingTargetSet, HeadVariant,
};
use crate::genetics::GeneticDistanceMatrix;
use crate::tensor::{cross_entropy, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("train: empty {0} split")]
    EmptySplit(&'static str),
    #[error("train: ratios must be positive and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("train: batch size must be positive")]
    ZeroBatch,
    #[error("train: stage 3 requested but the model has no attention blocks")]
    NoAttentionBlocks,
    #[error("train: sample {index} has shape {got}, expected {expected}")]
    BadSample {
        index: usize,
        got: String,
        expected: String,
    },
    #[error(transparent)]
    Tensor(#[from] crate::tensor::Error),
    #[error(transparent)]
    Embed(#[from] crate::embed::Error),
    #[error(transparent)]
    Interpret(#[from] crate::interpret::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

/// One labelled image, `[3, R, R]` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Sample<T: Element> {
    pub image: Tensor<T>,
    pub class: usize,
}

/// Index-level split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Split sample indices into train/val/test. Validation and test take the
/// floor of their shares; leftovers go to train. Stratified mode applies the
/// rule per class, preserving class proportions within one sample.
pub fn split_dataset(
    labels: &[usize],
    ratios: [f64; 3],
    seed: u64,
    stratified: bool,
) -> Result<DatasetSplit> {
    if labels.is_empty() {
        return Err(Error::EmptySplit("input"));
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|&r| r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios(ratios));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };

    let mut assign = |indices: &mut Vec<usize>, split: &mut DatasetSplit| {
        indices.shuffle(&mut rng);
        let n = indices.len();
        let n_val = (n as f64 * ratios[1]) as usize;
        let n_test = (n as f64 * ratios[2]) as usize;
        for (i, &idx) in indices.iter().enumerate() {
            if i < n_val {
                split.val.push(idx);
            } else if i < n_val + n_test {
                split.test.push(idx);
            } else {
                split.train.push(idx);
            }
        }
    };

    if stratified {
        let classes = labels.iter().copied().max().unwrap_or(0) + 1;
        for class in 0..classes {
            let mut members: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == class)
                .collect();
            if !members.is_empty() {
                assign(&mut members, &mut split);
            }
        }
    } else {
        let mut all: Vec<usize> = (0..labels.len()).collect();
        assign(&mut all, &mut split);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

impl DatasetSplit {
    /// Materialize the three subsets.
    pub fn gather<T: Element>(
        &self,
        samples: &[Sample<T>],
    ) -> (Vec<Sample<T>>, Vec<Sample<T>>, Vec<Sample<T>>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
        (pick(&self.train), pick(&self.val), pick(&self.test))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub augment: bool,
    pub augment_ranges: AugmentRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 12,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
            augment: false,
            augment_ranges: AugmentRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Full fine-tune with the replaced classification head.
    Two,
    /// Freeze all but the last convolution, head, and attention blocks.
    Three,
}

/// Loss and prediction rule sitting on the network output.
pub enum TrainingHead<'a> {
    /// Plain classification: cross-entropy, argmax prediction.
    Softmax,
    /// Genetic-distance regression: loss against the target rows,
    /// label-embedding classification against the diagonal-0 reference.
    Distance {
        targets: &'a EmbeddingTargetSet,
        variant: HeadVariant,
        metric: DistanceMetric,
        reference: &'a GeneticDistanceMatrix,
    },
}

impl TrainingHead<'_> {
    pub fn loss<T: Element>(&self, logits: &Tensor<T>, classes: &[usize]) -> Result<Tensor<T>> {
        match self {
            TrainingHead::Softmax => Ok(cross_entropy(logits, classes)?),
            TrainingHead::Distance {
                targets, variant, ..
            } => Ok(head_loss(logits, classes, targets, *variant)?),
        }
    }

    pub fn predict<T: Element>(&self, output_row: &[T]) -> Result<usize> {
        match self {
            TrainingHead::Softmax => {
                let mut best = 0usize;
                for (i, v) in output_row.iter().enumerate() {
                    if *v > output_row[best] {
                        best = i;
                    }
                }
                Ok(best)
            }
            TrainingHead::Distance {
                metric, reference, ..
            } => {
                let row: Vec<f64> = output_row.iter().map(|v| v.to_f64_lossy()).collect();
                let (class, _) = classify_by_distance(&row, reference, *metric)?;
                Ok(class)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

impl StageReport {
    /// Epoch log as CSV (`epoch,train_loss,val_accuracy`).
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for e in &self.epochs {
            out.push_str(&alloc::format!(
                "{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.val_accuracy
            ));
        }
        out
    }
}

/// Stack samples into one `[B, 3, R, R]` batch tensor.
pub fn stack_batch<T: Element>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = samples.first().ok_or(Error::EmptySplit("batch"))?;
    let shape = first.image.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.image.len());
    let mut classes = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if s.image.shape() != shape {
            return Err(Error::BadSample {
                index: i,
                got: crate::tensor::fmt_shape(s.image.shape()),
                expected: crate::tensor::fmt_shape(&shape),
            });
        }
        data.extend_from_slice(s.image.data());
        classes.push(s.class);
    }
    let mut batch_shape = alloc::vec![samples.len()];
    batch_shape.extend_from_slice(&shape);
    Ok((Tensor::from_vec(&batch_shape, data)?, classes))
}

/// Classification accuracy of the model under a head's prediction rule.
pub fn evaluate_accuracy<T: Element>(
    model: &mut Model<T>,
    samples: &[Sample<T>],
    head: &TrainingHead<'_>,
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let mut correct = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample<T>> = chunk.iter().collect();
        let (batch, classes) = stack_batch(&refs)?;
        let out = model.forward(&batch, Mode::Eval)?;
        let (_, k) = out.logits.dims2("evaluate")?;
        for (row, &truth) in classes.iter().enumerate() {
            let begin = row * k;
            let pred = head.predict(&out.logits.data()[begin..begin + k])?;
            if pred == truth {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

fn has_attention_blocks(model: &Model<impl Element>) -> bool {
    model.spec.layers.iter().any(|l| {
        matches!(
            l,
            LayerSpec::SeAttention { .. } | LayerSpec::EcaAttention { .. }
        )
    })
}

/// Run one training stage. The model ends at its best-validation parameters;
/// the report carries one log entry per epoch.
pub fn run_stage<T: Element>(
    model: &mut Model<T>,
    stage: Stage,
    train: &[Sample<T>],
    val: &[Sample<T>],
    head: &TrainingHead<'_>,
    cfg: &TrainConfig,
) -> Result<StageReport> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("val"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::ZeroBatch);
    }
    match stage {
        Stage::Two => model.store.set_trainable(|_| true),
        Stage::Three => {
            if !has_attention_blocks(model) {
                return Err(Error::NoAttentionBlocks);
            }
            model.store.set_trainable(stage3_trainable);
        }
    }

    let mut adam = Adam::new(cfg.adam());
    let mut report = StageReport {
        stage,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_accuracy: f64::NEG_INFINITY,
    };
    let mut best_params: Option<Vec<(String, Tensor<T>)>> = None;

    for epoch in 1..=cfg.epochs {
        // derived per-epoch stream: shuffling and augmentation draws
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut order: Vec<usize> = (0..train.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0f64;
        for batch_idx in order.chunks(cfg.batch_size) {
            let mut augmented: Vec<Sample<T>> = Vec::new();
            let refs: Vec<&Sample<T>> = if cfg.augment {
                for &i in batch_idx {
                    let s = &train[i];
                    let (_, h, w) = crate::interpret::image_dims(&s.image)?;
                    let op = sample_augment(&mut rng, &cfg.augment_ranges, h, w);
                    augmented.push(Sample {
                        image: augment(&s.image, &op)?,
                        class: s.class,
                    });
                }
                augmented.iter().collect()
            } else {
                batch_idx.iter().map(|&i| &train[i]).collect()
            };
            let (batch, classes) = stack_batch(&refs)?;
            let out = model.forward(&batch, Mode::Train)?;
            let loss = head.loss(&out.logits, &classes)?;
            loss.backward()?;
            adam.step(&mut model.store)?;
            model.store.clear_grads();
            loss_sum += loss.item()?.to_f64_lossy() * refs.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_accuracy = evaluate_accuracy(model, val, head, cfg.batch_size)?;
        report.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy,
        });
        // ties on validation accuracy go to the epoch with lower train loss,
        // so a val set saturated early does not pin an undertrained model
        let best_so_far = report
            .epochs
            .get(report.best_epoch.wrapping_sub(1))
            .map(|e| (e.val_accuracy, e.train_loss));
        let improved = match best_so_far {
            None => true,
            Some((best_acc, best_loss)) => {
                val_accuracy > best_acc || (val_accuracy == best_acc && train_loss < best_loss)
            }
        };
        if improved {
            report.best_val_accuracy = val_accuracy;
            report.best_epoch = epoch;
            best_params = Some(
                model
                    .store
                    .all()
                    .into_iter()
                    .map(|(name, tensor, _)| (name, tensor.detach()))
                    .collect(),
            );
        }
    }

    if let Some(params) = best_params {
        for (name, tensor) in params {
            model.store.set(&name, tensor)?;
        }
    }
    Ok(report)
}
