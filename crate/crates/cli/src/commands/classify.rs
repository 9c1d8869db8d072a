//! `classify`: label-embedding classification of images against a
//! diagonal-zero genetic distance matrix. One CSV row per image carries the
//! predicted class and the full label embedding.

use std::path::{Path, PathBuf};

use mushroomnet_core::backbone::{Mode, Model};
use mushroomnet_core::element::{DType, Element};
use mushroomnet_core::embed::classify_by_distance;
use mushroomnet_core::interpret::resize_bilinear;
use mushroomnet_core::tensor::Tensor;

use crate::{classify_embed_error, classify_interpret_error, classify_tensor_error, Failure, RunConfig};

pub fn run(cfg: RunConfig, out: &Path) -> Result<(), Failure> {
    let ckpt_path = cfg.checkpoint.clone().expect("checkpoint flag is required");
    let ckpt = crate::runio::load_checkpoint(&ckpt_path)?;
    let precision = ckpt.meta_str("precision").unwrap_or("f32");
    match super::parse_precision(precision)? {
        DType::F32 => run_typed::<f32>(cfg, ckpt, out),
        DType::F64 => run_typed::<f64>(cfg, ckpt, out),
    }
}

fn run_typed<T: Element>(
    cfg: RunConfig,
    ckpt: mushroomnet_core::checkpoint::Checkpoint,
    out: &Path,
) -> Result<(), Failure> {
    let mut model: Model<T> =
        Model::from_checkpoint(&ckpt).map_err(|e| Failure::data(e.to_string()))?;
    let matrix = super::load_matrix(cfg.matrix.as_ref().expect("matrix flag is required"))?;
    if matrix.size() != model.spec.classes {
        return Err(Failure::data(format!(
            "matrix has {} species but the model head is {}-wide",
            matrix.size(),
            model.spec.classes
        )));
    }
    let metric = super::parse_metric(&cfg.metric)?;
    let resolution = model.spec.resolution;

    let images: Vec<PathBuf> = match (&cfg.image, &cfg.data) {
        (Some(img), None) => vec![img.clone()],
        (None, Some(root)) => {
            let loaded = crate::runio::load_dataset::<T>(root, resolution)?;
            loaded.files.iter().map(|f| root.join(f)).collect()
        }
        _ => {
            return Err(Failure::usage(
                "classify needs exactly one of --image or --data",
            ))
        }
    };

    let mut csv = String::from("image,predicted_class,predicted_species");
    for name in matrix.names() {
        csv.push_str(&format!(",d_{}", name.replace(',', " ")));
    }
    csv.push('\n');

    let mut last_line = String::new();
    for path in &images {
        let raw = crate::runio::read_image::<T>(path)?;
        let image = if raw.shape()[1] == resolution && raw.shape()[2] == resolution {
            raw
        } else {
            resize_bilinear(&raw, resolution, resolution).map_err(classify_interpret_error)?
        };
        let batch = Tensor::from_vec(
            &[1, 3, resolution, resolution],
            image.data().to_vec(),
        )
        .map_err(classify_tensor_error)?;
        let output = model
            .forward(&batch, Mode::Eval)
            .map_err(classify_tensor_error)?;
        let embedding: Vec<f64> = output
            .logits
            .data()
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let (class, label_embedding) =
            classify_by_distance(&embedding, &matrix, metric).map_err(classify_embed_error)?;
        let mut row = format!(
            "{},{},{}",
            path.display(),
            class,
            matrix.names()[class]
        );
        for d in &label_embedding {
            row.push_str(&format!(",{d}"));
        }
        csv.push_str(&row);
        csv.push('\n');
        last_line = format!(
            "{} -> class {class} ({})",
            path.display(),
            matrix.names()[class]
        );
    }

    crate::runio::write_text(&out.join("label_embeddings.csv"), &csv)?;
    super::write_resolved_config(&cfg, out)?;
    if images.len() == 1 {
        println!("{last_line}");
    } else {
        println!(
            "classified {} images; label embeddings under {}",
            images.len(),
            out.display()
        );
    }
    Ok(())
}
