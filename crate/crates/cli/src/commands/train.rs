//! `train`: staged training over a dataset directory or an in-memory
//! synthetic set. Writes the best-validation checkpoint, the epoch log, and
//! the resolved config.

use std::path::Path;

use mushroomnet_core::backbone::{
    build_backbone, BackboneConfig, Model, NetworkSpec,
};
use mushroomnet_core::element::{DType, Element};
use mushroomnet_core::embed::{build_targets, EmbeddingTargetSet};
use mushroomnet_core::genetics::GeneticDistanceMatrix;
use mushroomnet_core::train::{
    generate_synthetic_dataset, run_stage, split_dataset, Sample, Stage, TrainConfig,
    TrainingHead,
};

use crate::{classify_tensor_error, classify_train_error, Failure, RunConfig};

pub fn run(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    match super::parse_precision(&cfg.precision)? {
        DType::F32 => run_typed::<f32>(cfg, out),
        DType::F64 => run_typed::<f64>(cfg, out),
    }
}

/// Dataset plus class names, from disk or generated.
pub fn load_samples<T: Element>(
    cfg: &RunConfig,
) -> Result<(Vec<Sample<T>>, Vec<String>), Failure> {
    match (&cfg.data, cfg.synthetic_spec()?) {
        (Some(root), _) => {
            let loaded = crate::runio::load_dataset::<T>(root, cfg.resolution)?;
            Ok((loaded.samples, loaded.class_names))
        }
        (None, Some((classes, per_class))) => {
            let samples =
                generate_synthetic_dataset::<T>(classes, per_class, cfg.resolution, cfg.seed)
                    .map_err(classify_tensor_error)?;
            let names = (0..classes).map(|c| format!("class_{c:02}")).collect();
            Ok((samples, names))
        }
        (None, None) => Err(Failure::usage(
            "train needs --data DIR or --synthetic CLASSESxPER_CLASS",
        )),
    }
}

/// The network spec a stage trains: stage 2 is the bare backbone with the
/// replaced head; stage 3 adds the strategy's attention blocks.
fn spec_for_stage(cfg: &RunConfig, classes: usize) -> Result<NetworkSpec, Failure> {
    let mut bc = BackboneConfig::new(classes, cfg.alpha, cfg.resolution);
    bc.se_reduction = cfg.se_reduction;
    bc.eca_kernel_size = cfg.eca_kernel;
    bc.first_bneck_exp = cfg.first_bneck_exp;
    let backbone = build_backbone(&bc).map_err(classify_tensor_error)?;
    Ok(match cfg.stage {
        3 => backbone.with_attention(super::parse_strategy(&cfg.strategy)?),
        _ => backbone,
    })
}

/// Distance-head ingredients from the config: processed training targets and
/// the diagonal-zero reference used for classification.
pub fn gendist_head(
    cfg: &RunConfig,
    classes: usize,
) -> Result<(EmbeddingTargetSet, GeneticDistanceMatrix), Failure> {
    let path = cfg.matrix.as_ref().ok_or_else(|| {
        Failure::usage("the gendist head needs --matrix with a distance matrix CSV")
    })?;
    let mut matrix = super::load_matrix(path)?;
    if let Some(name) = &cfg.drop {
        matrix = matrix
            .drop_species(name)
            .map_err(|e| Failure::data(e.to_string()))?;
    }
    if matrix.size() != classes {
        return Err(Failure::data(format!(
            "matrix has {} species but the dataset has {classes} classes",
            matrix.size()
        )));
    }
    let targets = build_targets(
        &matrix,
        super::parse_normalize(&cfg.normalize)?,
        cfg.diag,
        None,
    )
    .map_err(crate::classify_embed_error)?;
    Ok((targets, matrix))
}

fn run_typed<T: Element>(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    let (samples, class_names) = load_samples::<T>(&cfg)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.class).collect();
    let classes = class_names.len();

    let split = split_dataset(&labels, cfg.split_ratios, cfg.seed, cfg.stratified)
        .map_err(classify_train_error)?;
    let (train, val, _test) = split.gather(&samples);

    let spec = spec_for_stage(&cfg, classes)?;
    let mut model: Model<T> = Model::init(spec, cfg.seed).map_err(classify_tensor_error)?;
    if let Some(init) = &cfg.init_from {
        let ckpt = crate::runio::load_checkpoint(init)?;
        // permissive load: parameters absent from the checkpoint (fresh
        // attention blocks in stage 3) keep their initialization
        let report = model
            .load_arrays(&ckpt, false)
            .map_err(|e| Failure::data(format!("{}: {e}", init.display())))?;
        println!(
            "initialized {} arrays from {} ({} kept fresh)",
            report.loaded.len(),
            init.display(),
            report.missing_in_checkpoint.len()
        );
    }

    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        seed: cfg.seed,
        augment: cfg.augment,
        ..TrainConfig::default()
    };
    let stage = match cfg.stage {
        2 => Stage::Two,
        3 => Stage::Three,
        other => return Err(Failure::usage(format!("stage must be 2 or 3, got {other}"))),
    };

    let report = match cfg.head.as_str() {
        "classes" => run_stage(
            &mut model,
            stage,
            &train,
            &val,
            &TrainingHead::Softmax,
            &train_cfg,
        )
        .map_err(classify_train_error)?,
        "gendist" => {
            let (targets, reference) = gendist_head(&cfg, classes)?;
            let head = TrainingHead::Distance {
                targets: &targets,
                variant: super::parse_variant(&cfg.variant)?,
                metric: super::parse_metric(&cfg.metric)?,
                reference: &reference,
            };
            run_stage(&mut model, stage, &train, &val, &head, &train_cfg)
                .map_err(classify_train_error)?
        }
        other => {
            return Err(Failure::usage(format!(
                "unknown head {other:?} (classes|gendist)"
            )))
        }
    };

    let mut ckpt = model.to_checkpoint();
    ckpt.meta.insert("stage".into(), cfg.stage.to_string());
    ckpt.meta.insert("head".into(), cfg.head.clone());
    ckpt.meta.insert("strategy".into(), cfg.strategy.clone());
    ckpt.meta.insert("seed".into(), cfg.seed.to_string());
    ckpt.meta
        .insert("class_names".into(), class_names.join(";"));
    ckpt.meta.insert(
        "best_epoch".into(),
        report.best_epoch.to_string(),
    );
    crate::runio::save_checkpoint(&out.join("checkpoint.mnckpt"), &ckpt)?;
    crate::runio::write_text(&out.join("epochs.csv"), &report.epochs_csv())?;
    super::write_resolved_config(&cfg, out)?;
    println!(
        "stage {} done: {} epochs, best val accuracy {:.4} at epoch {}, {} parameters",
        cfg.stage,
        report.epochs.len(),
        report.best_val_accuracy,
        report.best_epoch,
        model.param_count()
    );
    Ok(())
}
