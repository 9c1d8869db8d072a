//! File access: datasets on disk, images, checkpoints.
//!
//! Dataset layout: one subdirectory per class under the dataset root, class
//! indices assigned in sorted subdirectory-name order, images as binary
//! PPM/PGM (PNG behind the `png` feature). Images are bilinearly resized to
//! the configured resolution on load.

use std::fs;
use std::path::{Path, PathBuf};

use mushroomnet_core::checkpoint::Checkpoint;
use mushroomnet_core::element::Element;
use mushroomnet_core::interpret::{decode_image, resize_bilinear};
use mushroomnet_core::tensor::Tensor;
use mushroomnet_core::train::Sample;

use crate::Failure;

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    write_bytes(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let bytes = read_bytes(path)?;
    Checkpoint::decode(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), Failure> {
    let bytes = ckpt
        .encode()
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    write_bytes(path, &bytes)
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("ppm") | Some("pgm") | Some("png")
    )
}

/// Decode one image file to `[3, H, W]` in `[0, 1]`. Grayscale images are
/// replicated across the three channels.
pub fn read_image<T: Element>(path: &Path) -> Result<Tensor<T>, Failure> {
    let bytes = read_bytes(path)?;
    let decoded: Tensor<T> = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path, &bytes)?,
        _ => decode_image(&bytes)
            .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?,
    };
    let (c, h, w) = match decoded.shape() {
        &[c, h, w] => (c, h, w),
        s => {
            return Err(Failure::data(format!(
                "{}: unexpected image shape {s:?}",
                path.display()
            )))
        }
    };
    if c == 3 {
        return Ok(decoded);
    }
    // replicate the single channel
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(&decoded.data()[..h * w]);
    }
    Tensor::from_vec(&[3, h, w], data).map_err(|e| Failure::data(format!("{e}")))
}

#[cfg(feature = "png")]
fn read_png<T: Element>(path: &Path, bytes: &[u8]) -> Result<Tensor<T>, Failure> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Failure::data(format!(
            "{}: only 8-bit PNG supported",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3usize,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Failure::data(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    let keep = channels.min(3);
    let mut data = vec![T::zero(); keep * h * w];
    for p in 0..h * w {
        for ch in 0..keep {
            data[ch * h * w + p] = T::cast(buf[p * channels + ch] as f64 / 255.0);
        }
    }
    Tensor::from_vec(&[keep, h, w], data).map_err(|e| Failure::data(format!("{e}")))
}

#[cfg(not(feature = "png"))]
fn read_png<T: Element>(path: &Path, _bytes: &[u8]) -> Result<Tensor<T>, Failure> {
    Err(Failure::data(format!(
        "{}: PNG support not compiled in (enable the `png` feature)",
        path.display()
    )))
}

/// A dataset loaded from disk: samples plus the sorted class names.
pub struct LoadedDataset<T: Element> {
    pub samples: Vec<Sample<T>>,
    pub class_names: Vec<String>,
    /// Relative file path per sample, parallel to `samples`.
    pub files: Vec<PathBuf>,
}

/// Load a class-per-directory dataset, resizing every image to
/// `resolution x resolution`.
pub fn load_dataset<T: Element>(
    root: &Path,
    resolution: usize,
) -> Result<LoadedDataset<T>, Failure> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Failure::data(format!("cannot read dataset {}: {e}", root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Failure::data(format!(
            "dataset {} needs at least 2 class directories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut samples = Vec::new();
    let mut files = Vec::new();
    let mut class_names = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        class_names.push(
            dir.file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("?")
                .to_string(),
        );
        let mut images: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Failure::data(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        images.sort();
        if images.is_empty() {
            return Err(Failure::data(format!(
                "class directory {} contains no images",
                dir.display()
            )));
        }
        for path in images {
            let image = read_image::<T>(&path)?;
            let image = if image.shape()[1] == resolution && image.shape()[2] == resolution {
                image
            } else {
                resize_bilinear(&image, resolution, resolution)
                    .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
            };
            samples.push(Sample { image, class });
            files.push(
                path.strip_prefix(root)
                    .map(Path::to_path_buf)
                    .unwrap_or(path),
            );
        }
    }
    Ok(LoadedDataset {
        samples,
        class_names,
        files,
    })
}
