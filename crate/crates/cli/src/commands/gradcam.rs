//! `gradcam`: class activation heatmap and overlay for one image.

use std::path::Path;

use mushroomnet_core::backbone::{Mode, Model};
use mushroomnet_core::element::{DType, Element};
use mushroomnet_core::interpret::{encode_pgm, encode_ppm, grad_cam, overlay, resize_bilinear};
use mushroomnet_core::tensor::Tensor;

use crate::{classify_interpret_error, classify_tensor_error, Failure, RunConfig};

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
    let image_path = cfg.image.clone().expect("image flag is required");
    let raw = crate::runio::read_image::<T>(&image_path)?;
    let resolution = model.spec.resolution;
    let image = if raw.shape()[1] == resolution && raw.shape()[2] == resolution {
        raw
    } else {
        resize_bilinear(&raw, resolution, resolution).map_err(classify_interpret_error)?
    };
    let mut batched = Vec::with_capacity(image.len());
    batched.extend_from_slice(image.data());
    let batch = Tensor::from_vec(&[1, 3, resolution, resolution], batched)
        .map_err(classify_tensor_error)?;

    let output = model
        .forward(&batch, Mode::Eval)
        .map_err(classify_tensor_error)?;
    let class = match cfg.class {
        Some(c) => c,
        None => {
            let logits = output.logits.data();
            let mut best = 0usize;
            for (i, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = i;
                }
            }
            best
        }
    };
    let heatmap = grad_cam(&output, class, (resolution, resolution))
        .map_err(classify_interpret_error)?;
    let blended =
        overlay(&image, &heatmap.upsampled, cfg.cam_alpha).map_err(classify_interpret_error)?;

    crate::runio::write_bytes(
        &out.join("heatmap.pgm"),
        &encode_pgm(&heatmap.upsampled).map_err(classify_interpret_error)?,
    )?;
    crate::runio::write_bytes(
        &out.join("overlay.ppm"),
        &encode_ppm(&blended).map_err(classify_interpret_error)?,
    )?;
    let mut cfg = cfg;
    cfg.class = Some(class);
    super::write_resolved_config(&cfg, out)?;
    println!(
        "heatmap for class {class} of {} written under {}",
        image_path.display(),
        out.display()
    );
    Ok(())
}
