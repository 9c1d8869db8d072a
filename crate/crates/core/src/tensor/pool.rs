//! Spatial pooling.

use alloc::boxed::Box;
use alloc::vec;

use crate::element::Element;
use crate::tensor::conv::conv_out_extent;
use crate::tensor::{BackwardArgs, Error, Result, Tensor};

impl<T: Element> Tensor<T> {
    /// Global average pooling: `[N,C,H,W] -> [N,C]`, the per-channel squeeze.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let op = "global_avg_pool";
        let (n, c, h, w) = self.dims4(op)?;
        let spatial = h * w;
        if spatial == 0 {
            return Err(Error::InvalidArg {
                op,
                msg: "empty spatial extent".into(),
            });
        }
        let count = T::cast(spatial as f64);
        let x = self.data();
        let mut out = vec![T::zero(); n * c];
        for i in 0..n * c {
            let base = i * spatial;
            let mut acc = T::zero();
            for j in 0..spatial {
                acc += x[base + j];
            }
            out[i] = acc / count;
        }
        Tensor::from_op(
            op,
            vec![n, c],
            out,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    let mut dx = vec![T::zero(); n * c * spatial];
                    for i in 0..n * c {
                        let g = args.out_grad[i] / count;
                        let base = i * spatial;
                        for j in 0..spatial {
                            dx[base + j] = g;
                        }
                    }
                    p.accumulate_grad(dx);
                }
                Ok(())
            }),
        )
    }

    /// Average pooling with a square window and no padding.
    pub fn avg_pool(&self, k: usize, stride: usize) -> Result<Tensor<T>> {
        let op = "avg_pool";
        let (n, c, h, w) = self.dims4(op)?;
        if k == 0 || stride == 0 {
            return Err(Error::InvalidArg {
                op,
                msg: "window and stride must be positive".into(),
            });
        }
        if k > h || k > w {
            return Err(Error::InvalidArg {
                op,
                msg: alloc::format!("window {k} larger than input {h}x{w}"),
            });
        }
        let oh = conv_out_extent(h, k, stride, 0);
        let ow = conv_out_extent(w, k, stride, 0);
        let count = T::cast((k * k) as f64);
        let x = self.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for i in 0..n * c {
            let xb = i * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for ky in 0..k {
                        let row = xb + (oy * stride + ky) * w + ox * stride;
                        for kx in 0..k {
                            acc += x[row + kx];
                        }
                    }
                    out[(i * oh + oy) * ow + ox] = acc / count;
                }
            }
        }
        Tensor::from_op(
            op,
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    let mut dx = vec![T::zero(); n * c * h * w];
                    for i in 0..n * c {
                        let xb = i * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = args.out_grad[(i * oh + oy) * ow + ox] / count;
                                for ky in 0..k {
                                    let row = xb + (oy * stride + ky) * w + ox * stride;
                                    for kx in 0..k {
                                        dx[row + kx] += g;
                                    }
                                }
                            }
                        }
                    }
                    p.accumulate_grad(dx);
                }
                Ok(())
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_of_constant_channel_is_the_constant() {
        let mut data = vec![3.5; 12];
        data.extend(vec![-1.25; 12]);
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 4], data).unwrap();
        let z = x.global_avg_pool().unwrap();
        assert_eq!(z.data(), &[3.5, -1.25]);
    }

    #[test]
    fn gap_of_2x2_example() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.global_avg_pool().unwrap().data(), &[2.5]);
    }

    #[test]
    fn gap_matches_brute_force_double_sum() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let x = Tensor::<f64>::uniform(&mut rng, &[2, 3, 5, 7], -2.0, 2.0);
        let z = x.global_avg_pool().unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for i in 0..5 {
                    for j in 0..7 {
                        acc += x.data()[((n * 3 + c) * 5 + i) * 7 + j];
                    }
                }
                let expect = acc / 35.0;
                assert!((z.data()[n * 3 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn avg_pool_7x7_to_single_cell() {
        let x = Tensor::<f64>::full(&[1, 2, 7, 7], 2.0);
        let y = x.avg_pool(7, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn avg_pool_window_shape_formula() {
        let x = Tensor::<f64>::ones(&[1, 1, 8, 10]);
        let y = x.avg_pool(2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 5]);
    }
}
