//! Deterministic image augmentation primitives.
//!
//! Operations take and return `[C, H, W]` images with values in `[0, 1]`.
//! Rotations by multiples of 90 degrees are exact pixel permutations; other
//! angles resample bilinearly around the image center. Crops resize back to
//! the original resolution.
//!
//! The magnitude ranges in [`AugmentRanges`] are configuration defaults, not
//! taken from any published recipe.

use alloc::format;

// Float provides trig/abs on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::interpret::{image_dims, resize_bilinear, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    /// Degrees, counterclockwise.
    Rotate { degrees: f64 },
    /// Window in pixels, then resize back to the full resolution.
    Crop {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
    },
    /// Unsharp masking: `img + amount * (img - blur3(img))`.
    Sharpen { amount: f64 },
    /// Scale deviations from the per-image mean: 1.0 is the identity.
    Contrast { factor: f64 },
    /// Additive shift: 0.0 is the identity.
    Brightness { delta: f64 },
}

fn rem_euclid(x: f64, m: f64) -> f64 {
    let r = x % m;
    if r < 0.0 {
        r + m
    } else {
        r
    }
}

pub fn augment<T: Element>(image: &Tensor<T>, op: &AugmentOp) -> Result<Tensor<T>> {
    match *op {
        AugmentOp::Rotate { degrees } => rotate(image, degrees),
        AugmentOp::Crop {
            x0,
            y0,
            width,
            height,
        } => crop(image, x0, y0, width, height),
        AugmentOp::Sharpen { amount } => sharpen(image, amount),
        AugmentOp::Contrast { factor } => contrast(image, factor),
        AugmentOp::Brightness { delta } => brightness(image, delta),
    }
}

fn rotate<T: Element>(image: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    let norm = rem_euclid(degrees, 360.0);
    if norm == 0.0 {
        return Ok(image.clone());
    }
    let quarter_turns = norm / 90.0;
    if quarter_turns.fract() == 0.0 {
        return Ok(rotate_quarters(image, c, h, w, quarter_turns as usize));
    }
    // arbitrary angle: inverse-map each output pixel, clamp to edges
    let rad = norm.to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = alloc::vec![T::zero(); c * h * w];
    for oy in 0..h {
        for ox in 0..w {
            let dy = oy as f64 - cy;
            let dx = ox as f64 - cx;
            let sy = (cos * dy + sin * dx + cy).clamp(0.0, (h - 1) as f64);
            let sx = (-sin * dy + cos * dx + cx).clamp(0.0, (w - 1) as f64);
            let y0 = sy as usize;
            let x0 = sx as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = T::cast(sy - y0 as f64);
            let fx = T::cast(sx - x0 as f64);
            let one = T::one();
            for ch in 0..c {
                let base = ch * h * w;
                let top =
                    image.data()[base + y0 * w + x0] * (one - fx) + image.data()[base + y0 * w + x1] * fx;
                let bot =
                    image.data()[base + y1 * w + x0] * (one - fx) + image.data()[base + y1 * w + x1] * fx;
                out[base + oy * w + ox] = top * (one - fy) + bot * fy;
            }
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], out)?)
}

/// Exact pixel permutation for multiples of 90 degrees (counterclockwise).
fn rotate_quarters<T: Element>(
    image: &Tensor<T>,
    c: usize,
    h: usize,
    w: usize,
    quarters: usize,
) -> Tensor<T> {
    let mut current = image.data().to_vec();
    let (mut ch, mut cw) = (h, w);
    for _ in 0..quarters % 4 {
        let mut next = alloc::vec![T::zero(); c * ch * cw];
        // (y, x) -> (cw - 1 - x, y) maps a HxW image to WxH
        for plane in 0..c {
            for y in 0..ch {
                for x in 0..cw {
                    let src = plane * ch * cw + y * cw + x;
                    let (ny, nx) = (cw - 1 - x, y);
                    next[plane * cw * ch + ny * ch + nx] = current[src];
                }
            }
        }
        core::mem::swap(&mut ch, &mut cw);
        current = next;
    }
    Tensor::from_vec(&[c, ch, cw], current).expect("permutation preserves element count")
}

fn crop<T: Element>(
    image: &Tensor<T>,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    if width == 0 || height == 0 || x0 + width > w || y0 + height > h {
        return Err(Error::Codec(format!(
            "crop window {width}x{height}+{x0}+{y0} outside {w}x{h} image"
        )));
    }
    let mut out = alloc::vec![T::zero(); c * height * width];
    for ch in 0..c {
        for y in 0..height {
            for x in 0..width {
                out[(ch * height + y) * width + x] =
                    image.data()[(ch * h + y0 + y) * w + x0 + x];
            }
        }
    }
    let cropped = Tensor::from_vec(&[c, height, width], out)?;
    resize_bilinear(&cropped, h, w)
}

fn sharpen<T: Element>(image: &Tensor<T>, amount: f64) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    let a = T::cast(amount);
    let ninth = T::cast(1.0 / 9.0);
    let mut out = alloc::vec![T::zero(); c * h * w];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                let mut blur = T::zero();
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        blur += image.data()[base + sy * w + sx];
                    }
                }
                blur = blur * ninth;
                let v = image.data()[base + y * w + x];
                out[base + y * w + x] = clamp01(v + a * (v - blur));
            }
        }
    }
    Ok(Tensor::from_vec(&[c, h, w], out)?)
}

fn contrast<T: Element>(image: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
    image_dims(image)?;
    let n = T::cast(image.len() as f64);
    let mean = image.data().iter().fold(T::zero(), |a, &v| a + v) / n;
    let f = T::cast(factor);
    let out = image
        .data()
        .iter()
        .map(|&v| clamp01(mean + f * (v - mean)))
        .collect();
    Ok(Tensor::from_vec(&image.shape().to_vec(), out)?)
}

fn brightness<T: Element>(image: &Tensor<T>, delta: f64) -> Result<Tensor<T>> {
    image_dims(image)?;
    let d = T::cast(delta);
    let out = image.data().iter().map(|&v| clamp01(v + d)).collect();
    Ok(Tensor::from_vec(&image.shape().to_vec(), out)?)
}

fn clamp01<T: Element>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Magnitude ranges for sampled augmentations. Defaults are conventional,
/// not prescribed by any source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_rotate_degrees: f64,
    pub min_crop_fraction: f64,
    pub max_sharpen: f64,
    pub contrast_low: f64,
    pub contrast_high: f64,
    pub max_brightness: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            max_rotate_degrees: 20.0,
            min_crop_fraction: 0.8,
            max_sharpen: 0.5,
            contrast_low: 0.8,
            contrast_high: 1.2,
            max_brightness: 0.1,
        }
    }
}

/// Draw one operation with a magnitude from the configured ranges.
pub fn sample_augment<R: Rng>(
    rng: &mut R,
    ranges: &AugmentRanges,
    height: usize,
    width: usize,
) -> AugmentOp {
    match rng.gen_range(0..5u32) {
        0 => AugmentOp::Rotate {
            degrees: rng.gen_range(-ranges.max_rotate_degrees..ranges.max_rotate_degrees),
        },
        1 => {
            let fh = rng.gen_range(ranges.min_crop_fraction..1.0);
            let fw = rng.gen_range(ranges.min_crop_fraction..1.0);
            let ch = ((height as f64 * fh) as usize).max(1);
            let cw = ((width as f64 * fw) as usize).max(1);
            AugmentOp::Crop {
                x0: rng.gen_range(0..=width - cw),
                y0: rng.gen_range(0..=height - ch),
                width: cw,
                height: ch,
            }
        }
        2 => AugmentOp::Sharpen {
            amount: rng.gen_range(0.0..ranges.max_sharpen),
        },
        3 => AugmentOp::Contrast {
            factor: rng.gen_range(ranges.contrast_low..ranges.contrast_high),
        },
        _ => AugmentOp::Brightness {
            delta: rng.gen_range(-ranges.max_brightness..ranges.max_brightness),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_image() -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        Tensor::uniform(&mut rng, &[3, 8, 8], 0.0, 1.0)
    }

    #[test]
    fn rotate_360_and_brightness_zero_are_identities() {
        let img = test_image();
        let r = augment(&img, &AugmentOp::Rotate { degrees: 360.0 }).unwrap();
        assert_eq!(r.data(), img.data());
        let b = augment(&img, &AugmentOp::Brightness { delta: 0.0 }).unwrap();
        assert_eq!(b.data(), img.data());
    }

    #[test]
    fn rotate_90_twice_equals_rotate_180() {
        let img = test_image();
        let once = augment(&img, &AugmentOp::Rotate { degrees: 90.0 }).unwrap();
        let twice = augment(&once, &AugmentOp::Rotate { degrees: 90.0 }).unwrap();
        let direct = augment(&img, &AugmentOp::Rotate { degrees: 180.0 }).unwrap();
        assert_eq!(twice.data(), direct.data());
    }

    #[test]
    fn rotate_90_is_a_pixel_permutation() {
        let img = test_image();
        let rotated = augment(&img, &AugmentOp::Rotate { degrees: 90.0 }).unwrap();
        let mut a = img.data().to_vec();
        let mut b = rotated.data().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn crop_out_of_bounds_errors() {
        let img = test_image();
        assert!(augment(
            &img,
            &AugmentOp::Crop {
                x0: 5,
                y0: 0,
                width: 5,
                height: 4
            }
        )
        .is_err());
    }

    #[test]
    fn crop_resizes_back_to_original_shape() {
        let img = test_image();
        let out = augment(
            &img,
            &AugmentOp::Crop {
                x0: 1,
                y0: 2,
                width: 5,
                height: 4,
            },
        )
        .unwrap();
        assert_eq!(out.shape(), img.shape());
    }

    #[test]
    fn contrast_and_sharpen_identities() {
        let img = test_image();
        let c = augment(&img, &AugmentOp::Contrast { factor: 1.0 }).unwrap();
        for (a, b) in c.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let s = augment(&img, &AugmentOp::Sharpen { amount: 0.0 }).unwrap();
        assert_eq!(s.data(), img.data());
    }

    #[test]
    fn outputs_stay_in_unit_range_and_channel_count() {
        let img = test_image();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranges = AugmentRanges::default();
        for _ in 0..20 {
            let op = sample_augment(&mut rng, &ranges, 8, 8);
            let out = augment(&img, &op).unwrap();
            assert_eq!(out.shape()[0], 3, "{op:?}");
            assert!(
                out.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                "{op:?}"
            );
        }
    }
}
