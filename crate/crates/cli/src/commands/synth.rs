//! `synth-data`: write a seeded synthetic dataset as class directories of
//! PPM images.

use std::path::Path;

use mushroomnet_core::interpret::encode_ppm;
use mushroomnet_core::train::generate_synthetic_dataset;

use crate::{Failure, RunConfig};

pub fn run(
    common: crate::CommonArgs,
    classes: Option<usize>,
    per_class: Option<usize>,
    resolution: Option<usize>,
) -> Result<(), Failure> {
    let mut cfg = RunConfig::from_file_or_default(common.config.as_ref())?;
    cfg.command = "synth-data".into();
    let (file_classes, file_per_class) = cfg.synthetic_spec()?.unwrap_or((3, 50));
    let classes = classes.unwrap_or(file_classes);
    let per_class = per_class.unwrap_or(file_per_class);
    cfg.synthetic = Some(format!("{classes}x{per_class}"));
    if let Some(r) = resolution {
        cfg.resolution = r;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    write(&cfg, classes, per_class, &common.out)
}

fn write(cfg: &RunConfig, classes: usize, per_class: usize, out: &Path) -> Result<(), Failure> {
    let samples = generate_synthetic_dataset::<f32>(classes, per_class, cfg.resolution, cfg.seed)
        .map_err(crate::classify_tensor_error)?;
    let digits = |n: usize| (n.max(1) as f64).log10() as usize + 1;
    let cd = digits(classes);
    let id = digits(per_class);
    for (i, sample) in samples.iter().enumerate() {
        let index = i % per_class;
        let dir = out.join(format!("class_{:0cd$}", sample.class, cd = cd.max(2)));
        let path = dir.join(format!("img_{:0id$}.ppm", index, id = id.max(3)));
        let bytes = encode_ppm(&sample.image).map_err(crate::classify_interpret_error)?;
        crate::runio::write_bytes(&path, &bytes)?;
    }
    super::write_resolved_config(cfg, out)?;
    println!(
        "wrote {} images ({classes} classes x {per_class}) at {}x{} under {}",
        samples.len(),
        cfg.resolution,
        cfg.resolution,
        out.display()
    );
    Ok(())
}
