//! Gradient-weighted class activation heatmaps, overlays, and the binary
//! PPM/PGM image codecs.
//!
//! The heatmap comes from the feature map feeding the global pool (the last
//! convolution with spatial extent): channel weights are the spatial means of
//! the class logit's gradient, the map is the ReLU of the weighted channel
//! sum, max-normalized when nonzero, then bilinearly upsampled to the input
//! size. ReLU plus max-normalization make the result invariant to positive
//! rescaling of the logit.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::backbone::ForwardOutput;
use crate::element::Element;
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("interpret: model output lacks a feature tap")]
    NoFeatureTap,
    #[error("interpret: heatmaps are computed one image at a time, got batch of {0}")]
    BatchedInput(usize),
    #[error("interpret: class {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("interpret: image codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Tensor(#[from] tensor::Error),
}

pub type Result<T> = core::result::Result<T, Error>;

/// Class activation heatmap: raw feature-map resolution plus the bilinear
/// upsample aligned to the input. All entries lie in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Heatmap<T: Element> {
    /// `[h', w']` at feature-map resolution.
    pub values: Tensor<T>,
    /// `[H, W]` at input resolution.
    pub upsampled: Tensor<T>,
    pub class: usize,
}

/// Compute the heatmap for `class` from a fresh forward pass output.
///
/// The output must come from a single-image batch whose graph has not been
/// differentiated yet (the call runs backward once from the class logit).
pub fn grad_cam<T: Element>(
    output: &ForwardOutput<T>,
    class: usize,
    input_hw: (usize, usize),
) -> Result<Heatmap<T>> {
    let tap = output.feature_tap.as_ref().ok_or(Error::NoFeatureTap)?;
    let (n, classes) = output.logits.dims2("grad_cam")?;
    if n != 1 {
        return Err(Error::BatchedInput(n));
    }
    if class >= classes {
        return Err(Error::ClassOutOfRange {
            index: class,
            classes,
        });
    }
    let (_, channels, h, w) = tap.dims4("grad_cam")?;
    let spatial = h * w;

    let logit = output.logits.pick(0, class)?;
    logit.backward()?;
    let grad = tap.grad().ok_or(Error::NoFeatureTap)?;

    // channel weights: spatial mean of the gradient
    let count = T::cast(spatial as f64);
    let mut weights = alloc::vec![T::zero(); channels];
    for (c, wslot) in weights.iter_mut().enumerate() {
        let base = c * spatial;
        let mut acc = T::zero();
        for j in 0..spatial {
            acc += grad[base + j];
        }
        *wslot = acc / count;
    }

    // ReLU of the weighted channel sum
    let data = tap.data();
    let mut map = alloc::vec![T::zero(); spatial];
    for (c, &alpha) in weights.iter().enumerate() {
        let base = c * spatial;
        for (j, slot) in map.iter_mut().enumerate() {
            *slot += alpha * data[base + j];
        }
    }
    let mut peak = T::zero();
    for v in map.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
        if *v > peak {
            peak = *v;
        }
    }
    if peak > T::zero() {
        for v in map.iter_mut() {
            *v = *v / peak;
        }
    }

    let values = Tensor::from_vec(&[h, w], map)?;
    let upsampled = resize_bilinear_2d(&values, input_hw.0, input_hw.1)?;
    Ok(Heatmap {
        values,
        upsampled,
        class,
    })
}

/// Bilinear resize of a `[H, W]` map (half-pixel centers, edges clamped).
pub fn resize_bilinear_2d<T: Element>(
    map: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (h, w) = map.dims2("resize_bilinear")?;
    let mut out = alloc::vec![T::zero(); out_h * out_w];
    sample_bilinear(map.data(), h, w, &mut out, out_h, out_w);
    Ok(Tensor::from_vec(&[out_h, out_w], out)?)
}

/// Bilinear resize of a `[C, H, W]` image.
pub fn resize_bilinear<T: Element>(
    image: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    let mut out = alloc::vec![T::zero(); c * out_h * out_w];
    for ch in 0..c {
        sample_bilinear(
            &image.data()[ch * h * w..(ch + 1) * h * w],
            h,
            w,
            &mut out[ch * out_h * out_w..(ch + 1) * out_h * out_w],
            out_h,
            out_w,
        );
    }
    Ok(Tensor::from_vec(&[c, out_h, out_w], out)?)
}

fn sample_bilinear<T: Element>(
    src: &[T],
    h: usize,
    w: usize,
    dst: &mut [T],
    out_h: usize,
    out_w: usize,
) {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = T::cast(fy - y0 as f64);
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = T::cast(fx - x0 as f64);
            let one = T::one();
            let top = src[y0 * w + x0] * (one - wx) + src[y0 * w + x1] * wx;
            let bot = src[y1 * w + x0] * (one - wx) + src[y1 * w + x1] * wx;
            dst[oy * out_w + ox] = top * (one - wy) + bot * wy;
        }
    }
}

pub(crate) fn image_dims<T: Element>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::Codec(format!(
            "expected [C,H,W] image, got shape {}",
            crate::tensor::fmt_shape(s)
        ))),
    }
}

/// Fixed 256-entry blue-to-red lookup table. Entry 0 is the floor color.
pub fn colormap_lut() -> [[f64; 3]; 256] {
    // five stops: dark blue, blue, cyan, yellow, red
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.00, [0.0, 0.0, 0.5]),
        (0.25, [0.0, 0.0, 1.0]),
        (0.50, [0.0, 1.0, 1.0]),
        (0.75, [1.0, 1.0, 0.0]),
        (1.00, [1.0, 0.0, 0.0]),
    ];
    let mut lut = [[0.0; 3]; 256];
    for (i, entry) in lut.iter_mut().enumerate() {
        let v = i as f64 / 255.0;
        let seg = STOPS.windows(2).find(|s| v <= s[1].0).expect("v <= 1");
        let (v0, c0) = seg[0];
        let (v1, c1) = seg[1];
        let t = if v1 > v0 { (v - v0) / (v1 - v0) } else { 0.0 };
        for ch in 0..3 {
            entry[ch] = c0[ch] + t * (c1[ch] - c0[ch]);
        }
    }
    lut
}

/// Blend a colormapped heatmap over an image:
/// `(1 - alpha) * image + alpha * colormap(heatmap)`, clamped to `[0, 1]`.
/// `image: [3, H, W]`, `heatmap: [H, W]`.
pub fn overlay<T: Element>(
    image: &Tensor<T>,
    heatmap: &Tensor<T>,
    alpha: f64,
) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(image)?;
    if c != 3 {
        return Err(Error::Codec(format!("overlay needs 3 channels, got {c}")));
    }
    if heatmap.shape() != [h, w] {
        return Err(Error::Codec(format!(
            "heatmap shape {} does not match image {}x{}",
            crate::tensor::fmt_shape(heatmap.shape()),
            h,
            w
        )));
    }
    let lut = colormap_lut();
    let a = T::cast(alpha);
    let keep = T::one() - a;
    let mut out = alloc::vec![T::zero(); 3 * h * w];
    for p in 0..h * w {
        let v = heatmap.data()[p].to_f64_lossy().clamp(0.0, 1.0);
        let color = lut[((v * 255.0 + 0.5) as usize).min(255)];
        for ch in 0..3 {
            let blended = image.data()[ch * h * w + p] * keep + T::cast(color[ch]) * a;
            out[ch * h * w + p] = blended.max(T::zero()).min(T::one());
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out)?)
}

// --- PPM (P6) / PGM (P5) codecs -------------------------------------------
//
// Binary variants with maxval 255. Values quantize as round(v * 255) clamped
// to [0, 255], so write -> read -> write is byte-identical.

fn quantize<T: Element>(v: T) -> u8 {
    let f = v.to_f64_lossy();
    let scaled = (f * 255.0 + 0.5) as i64;
    scaled.clamp(0, 255) as u8
}

/// Encode `[3, H, W]` as binary PPM (P6).
pub fn encode_ppm<T: Element>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let (c, h, w) = image_dims(image)?;
    if c != 3 {
        return Err(Error::Codec(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push(quantize(image.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Encode `[1, H, W]` or `[H, W]` as binary PGM (P5).
pub fn encode_pgm<T: Element>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let (data, h, w) = match map.shape() {
        &[1, h, w] | &[h, w] => (map.data(), h, w),
        s => {
            return Err(Error::Codec(format!(
                "PGM needs a single-channel map, got shape {}",
                crate::tensor::fmt_shape(s)
            )))
        }
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Decode binary PPM (P6) or PGM (P5) into `[3, H, W]` / `[1, H, W]` with
/// values in `[0, 1]`.
pub fn decode_image<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0usize;
    let magic = read_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P6" => 3usize,
        "P5" => 1,
        other => return Err(Error::Codec(format!("unsupported magic {other:?}"))),
    };
    let w: usize = parse_token(bytes, &mut pos, "width")?;
    let h: usize = parse_token(bytes, &mut pos, "height")?;
    let maxval: usize = parse_token(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Codec(format!("only maxval 255 supported, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Codec("truncated raster".to_string()))?;
    let scale = T::cast(1.0 / 255.0);
    let mut data = alloc::vec![T::zero(); need];
    let plane = w * h;
    for p in 0..plane {
        for ch in 0..channels {
            data[ch * plane + p] = T::cast(raster[p * channels + ch] as f64) * scale;
        }
    }
    Ok(Tensor::from_vec(&[channels, h, w], data)?)
}

/// Next whitespace-separated token, skipping `#` comment lines.
fn read_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Codec("unexpected end of header".to_string()));
    }
    core::str::from_utf8(&bytes[start..*pos])
        .map(ToString::to_string)
        .map_err(|_| Error::Codec("non-ASCII header".to_string()))
}

fn parse_token(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = read_token(bytes, pos)?;
    tok.parse()
        .map_err(|_| Error::Codec(format!("bad {what}: {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::backbone::ForwardOutput;

    /// Toy "network": logit = scale * sum(A) for a single-channel map A.
    fn sum_logit_output(map: &Tensor<f64>, scale: f64) -> ForwardOutput<f64> {
        let (_, _, h, w) = map.dims4("test").unwrap();
        let pooled = map.global_avg_pool().unwrap();
        let factor = Tensor::from_vec(&[1, 1], alloc::vec![scale * (h * w) as f64]).unwrap();
        let logits = pooled.scale_channels(&factor).unwrap();
        ForwardOutput {
            logits,
            feature_tap: Some(map.clone()),
        }
    }

    #[test]
    fn sum_logit_heatmap_is_relu_of_the_map_normalized() {
        let data = alloc::vec![0.5, -1.0, 2.0, 0.25, -0.5, 1.0];
        let map = Tensor::<f64>::from_vec(&[1, 1, 2, 3], data.clone())
            .unwrap()
            .requires_grad();
        let out = sum_logit_output(&map, 1.0);
        let hm = grad_cam(&out, 0, (2, 3)).unwrap();
        let peak = 2.0;
        for (got, &raw) in hm.values.data().iter().zip(&data) {
            let expect = raw.max(0.0) / peak;
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
        assert_eq!(hm.upsampled.shape(), &[2, 3]);
    }

    #[test]
    fn negated_logit_on_nonnegative_map_gives_zero_heatmap() {
        let map = Tensor::<f64>::from_vec(&[1, 1, 2, 2], alloc::vec![0.2, 0.4, 0.0, 1.0])
            .unwrap()
            .requires_grad();
        let out = sum_logit_output(&map, -1.0);
        let hm = grad_cam(&out, 0, (4, 4)).unwrap();
        assert!(hm.values.data().iter().all(|&v| v == 0.0));
        assert!(hm.upsampled.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_is_invariant_to_positive_logit_rescaling() {
        let data = alloc::vec![0.5, -1.0, 2.0, 0.25, -0.5, 1.0];
        let a = {
            let map = Tensor::<f64>::from_vec(&[1, 1, 2, 3], data.clone())
                .unwrap()
                .requires_grad();
            grad_cam(&sum_logit_output(&map, 1.0), 0, (2, 3)).unwrap()
        };
        let b = {
            let map = Tensor::<f64>::from_vec(&[1, 1, 2, 3], data)
                .unwrap()
                .requires_grad();
            grad_cam(&sum_logit_output(&map, 2.5), 0, (2, 3)).unwrap()
        };
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Two-channel linear toy: logit = sum_k w_k * mean(A_k). The per-pixel
    /// gradient is w_k / (h*w), so the expected map is
    /// relu(sum_k (w_k/(h*w)) * A_k), max-normalized — computed here by hand
    /// without any autodiff.
    #[test]
    fn two_channel_linear_net_matches_hand_oracle() {
        let (h, w) = (2usize, 2usize);
        let a_data = alloc::vec![0.3, -0.7, 1.2, 0.1, -0.2, 0.9, 0.4, -1.5];
        let weights = [0.8f64, -0.6];
        let map = Tensor::<f64>::from_vec(&[1, 2, h, w], a_data.clone())
            .unwrap()
            .requires_grad();
        let pooled = map.global_avg_pool().unwrap();
        let wt = Tensor::from_vec(&[1, 2], weights.to_vec()).unwrap();
        let logits = pooled
            .dense(&wt, None)
            .unwrap();
        let out = ForwardOutput {
            logits,
            feature_tap: Some(map.clone()),
        };
        let hm = grad_cam(&out, 0, (h, w)).unwrap();

        // hand oracle
        let spatial = h * w;
        let mut expect = alloc::vec![0.0f64; spatial];
        for p in 0..spatial {
            let mut acc = 0.0;
            for (k, &wk) in weights.iter().enumerate() {
                let grad = wk / spatial as f64; // d logit / d A_k(p)
                acc += grad * a_data[k * spatial + p];
            }
            expect[p] = acc.max(0.0);
        }
        let peak = expect.iter().cloned().fold(0.0f64, f64::max);
        if peak > 0.0 {
            for e in expect.iter_mut() {
                *e /= peak;
            }
        }
        for (got, want) in hm.values.data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn missing_tap_and_batched_input_error() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        let out = ForwardOutput {
            logits,
            feature_tap: None,
        };
        assert!(matches!(
            grad_cam(&out, 0, (2, 2)),
            Err(Error::NoFeatureTap)
        ));

        let map = Tensor::<f64>::ones(&[2, 1, 2, 2]).requires_grad();
        let pooled = map.global_avg_pool().unwrap();
        let out = ForwardOutput {
            logits: pooled,
            feature_tap: Some(map),
        };
        assert!(matches!(grad_cam(&out, 0, (2, 2)), Err(Error::BatchedInput(2))));
    }

    #[test]
    fn overlay_alpha_zero_is_the_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = Tensor::<f64>::uniform(&mut rng, &[3, 4, 5], 0.0, 1.0);
        let hm = Tensor::<f64>::zeros(&[4, 5]);
        let out = overlay(&img, &hm, 0.0).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn overlay_alpha_one_zero_heatmap_is_floor_color() {
        let img = Tensor::<f64>::full(&[3, 2, 2], 0.7);
        let hm = Tensor::<f64>::zeros(&[2, 2]);
        let out = overlay(&img, &hm, 1.0).unwrap();
        let floor = colormap_lut()[0];
        for p in 0..4 {
            for ch in 0..3 {
                assert_eq!(out.data()[ch * 4 + p], floor[ch]);
            }
        }
    }

    #[test]
    fn ppm_round_trip_is_byte_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = Tensor::<f64>::uniform(&mut rng, &[3, 5, 7], 0.0, 1.0);
        let bytes = encode_ppm(&img).unwrap();
        let back: Tensor<f64> = decode_image(&bytes).unwrap();
        assert_eq!(back.shape(), &[3, 5, 7]);
        let again = encode_ppm(&back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn pgm_round_trip_is_byte_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let map = Tensor::<f64>::uniform(&mut rng, &[6, 3], 0.0, 1.0);
        let bytes = encode_pgm(&map).unwrap();
        let back: Tensor<f64> = decode_image(&bytes).unwrap();
        assert_eq!(back.shape(), &[1, 6, 3]);
        assert_eq!(bytes, encode_pgm(&back).unwrap());
    }

    #[test]
    fn decoder_handles_comments_and_rejects_depth() {
        let bytes = b"P5\n# a comment\n2 1\n255\n\x00\xff";
        let img: Tensor<f64> = decode_image(bytes).unwrap();
        assert_eq!(img.shape(), &[1, 1, 2]);
        assert_eq!(img.data()[0], 0.0);
        assert!((img.data()[1] - 1.0).abs() < 1e-12);

        let bad = b"P7\n2 1\n255\n\x00\xff";
        assert!(decode_image::<f64>(bad).is_err());
    }

    #[test]
    fn bilinear_resize_preserves_constants_and_shape() {
        let img = Tensor::<f64>::full(&[3, 4, 4], 0.25);
        let out = resize_bilinear(&img, 9, 7).unwrap();
        assert_eq!(out.shape(), &[3, 9, 7]);
        assert!(out.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn colormap_runs_blue_to_red() {
        let lut = colormap_lut();
        assert_eq!(lut[0], [0.0, 0.0, 0.5]);
        assert_eq!(lut[255], [1.0, 0.0, 0.0]);
        // monotone red channel over the second half
        for i in 128..255 {
            assert!(lut[i + 1][0] >= lut[i][0] - 1e-12);
        }
    }
}
