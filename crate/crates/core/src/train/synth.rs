//! Procedural synthetic dataset: class-distinct cap-and-stem figures on
//! noise backgrounds, a stand-in for real photographs at desk scale.
//!
//! Each class gets its own cap hue and cap/stem size ratio; position and
//! size jitter per image. Image `(class, index)` is generated from its own
//! ChaCha stream, so datasets are bit-identical for a seed regardless of
//! generation order.

// Float provides trig on f64 in no_std builds.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;
use crate::tensor::{Error, Result, Tensor};
use crate::train::Sample;

/// Deterministic HSV -> RGB for hue in `[0, 1)`.
fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - h.floor()) * 6.0;
    let sector = h6 as usize % 6;
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Generate `classes * per_class` labelled images of shape `[3, R, R]`.
pub fn generate_synthetic_dataset<T: Element>(
    classes: usize,
    per_class: usize,
    resolution: usize,
    seed: u64,
) -> Result<alloc::vec::Vec<Sample<T>>> {
    if classes < 2 || per_class == 0 || resolution < 8 {
        return Err(Error::InvalidArg {
            op: "generate_synthetic_dataset",
            msg: alloc::format!(
                "need >=2 classes, >=1 per class, resolution >=8 (got {classes}/{per_class}/{resolution})"
            ),
        });
    }
    let mut samples = alloc::vec::Vec::with_capacity(classes * per_class);
    for class in 0..classes {
        for index in 0..per_class {
            let image = synth_image(classes, class, index, resolution, seed)?;
            samples.push(Sample { image, class });
        }
    }
    Ok(samples)
}

fn synth_image<T: Element>(
    classes: usize,
    class: usize,
    index: usize,
    resolution: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class * 1_000_003 + index) as u64 + 1);
    let r = resolution as f64;

    // class signature: hue around the wheel, cap aspect from flat to tall
    let hue = class as f64 / classes as f64;
    let cap_aspect = 0.45 + 0.35 * (class as f64 / (classes.max(2) - 1) as f64);
    let cap_rgb = hsv_to_rgb(hue, 0.85, 0.9);
    let stem_rgb = [0.82, 0.76, 0.62];

    let cx = r * 0.5 + rng.gen_range(-0.06..0.06) * r;
    let cy = r * 0.40 + rng.gen_range(-0.05..0.05) * r;
    let rx = r * (0.26 + rng.gen_range(-0.03..0.03));
    let ry = rx * (cap_aspect + rng.gen_range(-0.05..0.05));
    let stem_halfwidth = r * (0.05 + 0.04 * (class % 3) as f64 / 2.0);
    let stem_bottom = r * 0.88;

    let n = resolution;
    let mut data = alloc::vec![T::zero(); 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let fx = x as f64;
            let fy = y as f64;
            // noise background
            let mut px = [
                rng.gen_range(0.30..0.62),
                rng.gen_range(0.30..0.62),
                rng.gen_range(0.30..0.62),
            ];
            let in_stem = (fx - cx).abs() <= stem_halfwidth && fy >= cy && fy <= stem_bottom;
            let dx = (fx - cx) / rx;
            let dy = (fy - cy) / ry;
            let in_cap = dx * dx + dy * dy <= 1.0 && fy <= cy + ry * 0.35;
            if in_stem {
                px = stem_rgb;
            }
            if in_cap {
                px = cap_rgb;
            }
            for ch in 0..3 {
                data[ch * n * n + y * n + x] = T::cast(px[ch]);
            }
        }
    }
    Tensor::from_vec(&[3, n, n], data)
}
