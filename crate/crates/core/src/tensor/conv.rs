//! 2-D convolutions: full and depthwise.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;

use crate::element::Element;
use crate::tensor::{fmt_shape, BackwardArgs, Error, Result, Tensor};

/// `floor((extent + 2*padding - k) / stride) + 1`
pub fn conv_out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

struct ConvGeom {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

fn check_geometry(
    op: &'static str,
    x: &[usize],
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<ConvGeom> {
    let (n, c_in, h, w) = (x[0], x[1], x[2], x[3]);
    if stride < 1 {
        return Err(Error::InvalidArg {
            op,
            msg: "stride must be >= 1".into(),
        });
    }
    if kh > h + 2 * padding || kw > w + 2 * padding {
        return Err(Error::InvalidArg {
            op,
            msg: format!(
                "kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ),
        });
    }
    Ok(ConvGeom {
        n,
        c_in,
        h,
        w,
        kh,
        kw,
        oh: conv_out_extent(h, kh, stride, padding),
        ow: conv_out_extent(w, kw, stride, padding),
        stride,
        padding,
    })
}

/// Valid kernel index range for one output coordinate, clipping the padding.
#[inline]
fn kernel_range(o: usize, k: usize, stride: usize, padding: usize, extent: usize) -> (usize, usize, isize) {
    let start = o as isize * stride as isize - padding as isize;
    let k0 = if start < 0 { (-start) as usize } else { 0 };
    let k1 = k.min((extent as isize - start).max(0) as usize);
    (k0, k1, start)
}

impl<T: Element> Tensor<T> {
    /// 2-D convolution. `x: [N,C,H,W]`, `w: [Co,C,kh,kw]`, optional bias `[Co]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let op = "conv2d";
        let (_, c_in, _, _) = self.dims4(op)?;
        let (c_out, wc, kh, kw) = weight.dims4(op)?;
        if wc != c_in {
            return Err(Error::ShapeMismatch {
                op,
                left: fmt_shape(self.shape()),
                right: fmt_shape(weight.shape()),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c_out] {
                return Err(Error::ShapeMismatch {
                    op,
                    left: format!("{c_out} output channels"),
                    right: fmt_shape(b.shape()),
                });
            }
        }
        let g = check_geometry(op, self.shape(), kh, kw, stride, padding)?;
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![T::zero(); g.n * c_out * g.oh * g.ow];

        for n in 0..g.n {
            for co in 0..c_out {
                let b = bias.map(|b| b.data()[co]).unwrap_or_else(T::zero);
                for oy in 0..g.oh {
                    let (ky0, ky1, iy0) = kernel_range(oy, g.kh, g.stride, g.padding, g.h);
                    for ox in 0..g.ow {
                        let (kx0, kx1, ix0) = kernel_range(ox, g.kw, g.stride, g.padding, g.w);
                        let mut acc = b;
                        for ci in 0..g.c_in {
                            let xb = ((n * g.c_in + ci) * g.h) as isize;
                            let wb = ((co * g.c_in + ci) * g.kh) * g.kw;
                            for ky in ky0..ky1 {
                                let xrow = ((xb + iy0 + ky as isize) as usize) * g.w;
                                let wrow = wb + ky * g.kw;
                                for kx in kx0..kx1 {
                                    let ix = (ix0 + kx as isize) as usize;
                                    acc += x[xrow + ix] * wt[wrow + kx];
                                }
                            }
                        }
                        out[((n * c_out + co) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let shape = vec![g.n, c_out, g.oh, g.ow];
        Tensor::from_op(
            op,
            shape,
            out,
            parents,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xp = &args.parents[0];
                let wp = &args.parents[1];
                let bp = args.parents.get(2);
                let x = xp.data();
                let wt = wp.data();
                let dy = args.out_grad;
                let need_dx = xp.wants_grad();
                let need_dw = wp.wants_grad();
                let mut dx = vec![T::zero(); if need_dx { x.len() } else { 0 }];
                let mut dw = vec![T::zero(); if need_dw { wt.len() } else { 0 }];
                for n in 0..g.n {
                    for co in 0..c_out {
                        for oy in 0..g.oh {
                            let (ky0, ky1, iy0) = kernel_range(oy, g.kh, g.stride, g.padding, g.h);
                            for ox in 0..g.ow {
                                let (kx0, kx1, ix0) =
                                    kernel_range(ox, g.kw, g.stride, g.padding, g.w);
                                let go = dy[((n * c_out + co) * g.oh + oy) * g.ow + ox];
                                if go == T::zero() {
                                    continue;
                                }
                                for ci in 0..g.c_in {
                                    let xb = ((n * g.c_in + ci) * g.h) as isize;
                                    let wb = ((co * g.c_in + ci) * g.kh) * g.kw;
                                    for ky in ky0..ky1 {
                                        let xrow = ((xb + iy0 + ky as isize) as usize) * g.w;
                                        let wrow = wb + ky * g.kw;
                                        for kx in kx0..kx1 {
                                            let ix = (ix0 + kx as isize) as usize;
                                            if need_dw {
                                                dw[wrow + kx] += go * x[xrow + ix];
                                            }
                                            if need_dx {
                                                dx[xrow + ix] += go * wt[wrow + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_dx {
                    xp.accumulate_grad(dx);
                }
                if need_dw {
                    wp.accumulate_grad(dw);
                }
                if let Some(bp) = bp {
                    if bp.wants_grad() {
                        let mut db = vec![T::zero(); c_out];
                        for n in 0..g.n {
                            for co in 0..c_out {
                                let base = ((n * c_out + co) * g.oh) * g.ow;
                                for i in 0..g.oh * g.ow {
                                    db[co] += dy[base + i];
                                }
                            }
                        }
                        bp.accumulate_grad(db);
                    }
                }
                Ok(())
            }),
        )
    }

    /// Depthwise 2-D convolution: channel `c` of the input convolves only
    /// with kernel `c`. `x: [N,C,H,W]`, `w: [C,1,kh,kw]`.
    pub fn depthwise_conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        let op = "depthwise_conv2d";
        let (_, c_in, _, _) = self.dims4(op)?;
        let (wc, wone, kh, kw) = weight.dims4(op)?;
        if wc != c_in || wone != 1 {
            return Err(Error::ShapeMismatch {
                op,
                left: fmt_shape(self.shape()),
                right: fmt_shape(weight.shape()),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [c_in] {
                return Err(Error::ShapeMismatch {
                    op,
                    left: format!("{c_in} channels"),
                    right: fmt_shape(b.shape()),
                });
            }
        }
        let g = check_geometry(op, self.shape(), kh, kw, stride, padding)?;
        let x = self.data();
        let wt = weight.data();
        let mut out = vec![T::zero(); g.n * g.c_in * g.oh * g.ow];

        for n in 0..g.n {
            for c in 0..g.c_in {
                let b = bias.map(|b| b.data()[c]).unwrap_or_else(T::zero);
                let xb = (n * g.c_in + c) * g.h;
                let wb = c * g.kh * g.kw;
                for oy in 0..g.oh {
                    let (ky0, ky1, iy0) = kernel_range(oy, g.kh, g.stride, g.padding, g.h);
                    for ox in 0..g.ow {
                        let (kx0, kx1, ix0) = kernel_range(ox, g.kw, g.stride, g.padding, g.w);
                        let mut acc = b;
                        for ky in ky0..ky1 {
                            let xrow = (xb + (iy0 + ky as isize) as usize) * g.w;
                            let wrow = wb + ky * g.kw;
                            for kx in kx0..kx1 {
                                acc += x[xrow + (ix0 + kx as isize) as usize] * wt[wrow + kx];
                            }
                        }
                        out[((n * g.c_in + c) * g.oh + oy) * g.ow + ox] = acc;
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let shape = vec![g.n, g.c_in, g.oh, g.ow];
        Tensor::from_op(
            op,
            shape,
            out,
            parents,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xp = &args.parents[0];
                let wp = &args.parents[1];
                let bp = args.parents.get(2);
                let x = xp.data();
                let wt = wp.data();
                let dy = args.out_grad;
                let need_dx = xp.wants_grad();
                let need_dw = wp.wants_grad();
                let mut dx = vec![T::zero(); if need_dx { x.len() } else { 0 }];
                let mut dw = vec![T::zero(); if need_dw { wt.len() } else { 0 }];
                let mut db = vec![T::zero(); g.c_in];
                for n in 0..g.n {
                    for c in 0..g.c_in {
                        let xb = (n * g.c_in + c) * g.h;
                        let wb = c * g.kh * g.kw;
                        for oy in 0..g.oh {
                            let (ky0, ky1, iy0) = kernel_range(oy, g.kh, g.stride, g.padding, g.h);
                            for ox in 0..g.ow {
                                let (kx0, kx1, ix0) =
                                    kernel_range(ox, g.kw, g.stride, g.padding, g.w);
                                let go = dy[((n * g.c_in + c) * g.oh + oy) * g.ow + ox];
                                if go == T::zero() {
                                    continue;
                                }
                                db[c] += go;
                                for ky in ky0..ky1 {
                                    let xrow = (xb + (iy0 + ky as isize) as usize) * g.w;
                                    let wrow = wb + ky * g.kw;
                                    for kx in kx0..kx1 {
                                        let ix = (ix0 + kx as isize) as usize;
                                        if need_dw {
                                            dw[wrow + kx] += go * x[xrow + ix];
                                        }
                                        if need_dx {
                                            dx[xrow + ix] += go * wt[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_dx {
                    xp.accumulate_grad(dx);
                }
                if need_dw {
                    wp.accumulate_grad(dw);
                }
                if let Some(bp) = bp {
                    if bp.wants_grad() {
                        bp.accumulate_grad(db);
                    }
                }
                Ok(())
            }),
        )
    }
}
