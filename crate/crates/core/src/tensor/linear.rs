//! Fully connected layers and the cross-channel 1-D convolution.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;

use crate::element::Element;
use crate::tensor::{fmt_shape, BackwardArgs, Error, Result, Tensor};

impl<T: Element> Tensor<T> {
    /// `y = x Wᵀ + b` with `x: [N,Cin]`, `w: [Cout,Cin]`, `b: [Cout]`.
    pub fn dense(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let op = "dense";
        let (n, c_in) = self.dims2(op)?;
        let (c_out, wc) = weight.dims2(op)?;
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
                    left: format!("{c_out} output features"),
                    right: fmt_shape(b.shape()),
                });
            }
        }
        let x = self.data();
        let w = weight.data();
        let mut out = vec![T::zero(); n * c_out];
        for i in 0..n {
            for j in 0..c_out {
                let mut acc = bias.map(|b| b.data()[j]).unwrap_or_else(T::zero);
                let xrow = i * c_in;
                let wrow = j * c_in;
                for k in 0..c_in {
                    acc += x[xrow + k] * w[wrow + k];
                }
                out[i * c_out + j] = acc;
            }
        }
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            op,
            vec![n, c_out],
            out,
            parents,
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let xp = &args.parents[0];
                let wp = &args.parents[1];
                let dy = args.out_grad;
                if xp.wants_grad() {
                    let w = wp.data();
                    let mut dx = vec![T::zero(); n * c_in];
                    for i in 0..n {
                        for j in 0..c_out {
                            let g = dy[i * c_out + j];
                            if g == T::zero() {
                                continue;
                            }
                            for k in 0..c_in {
                                dx[i * c_in + k] += g * w[j * c_in + k];
                            }
                        }
                    }
                    xp.accumulate_grad(dx);
                }
                if wp.wants_grad() {
                    let x = xp.data();
                    let mut dw = vec![T::zero(); c_out * c_in];
                    for i in 0..n {
                        for j in 0..c_out {
                            let g = dy[i * c_out + j];
                            if g == T::zero() {
                                continue;
                            }
                            for k in 0..c_in {
                                dw[j * c_in + k] += g * x[i * c_in + k];
                            }
                        }
                    }
                    wp.accumulate_grad(dw);
                }
                if let Some(bp) = args.parents.get(2) {
                    if bp.wants_grad() {
                        let mut db = vec![T::zero(); c_out];
                        for i in 0..n {
                            for j in 0..c_out {
                                db[j] += dy[i * c_out + j];
                            }
                        }
                        bp.accumulate_grad(db);
                    }
                }
                Ok(())
            }),
        )
    }

    /// Cross-channel 1-D convolution with zero padding `(k-1)/2`, so the
    /// output has the same channel count. `z: [N,C]`, `w: [k]`, `k` odd.
    pub fn conv1d_channels(&self, weight: &Tensor<T>) -> Result<Tensor<T>> {
        let op = "conv1d_channels";
        let (n, c) = self.dims2(op)?;
        let k = match weight.shape() {
            &[k] => k,
            s => {
                return Err(Error::InvalidArg {
                    op,
                    msg: format!("kernel must be rank-1, got {}", fmt_shape(s)),
                })
            }
        };
        if k % 2 == 0 {
            return Err(Error::InvalidArg {
                op,
                msg: format!("kernel size must be odd, got {k}"),
            });
        }
        let half = (k / 2) as isize;
        let z = self.data();
        let w = weight.data();
        let mut out = vec![T::zero(); n * c];
        for i in 0..n {
            let base = i * c;
            for ci in 0..c as isize {
                let mut acc = T::zero();
                for j in 0..k as isize {
                    let src = ci + j - half;
                    if src >= 0 && src < c as isize {
                        acc += z[base + src as usize] * w[j as usize];
                    }
                }
                out[base + ci as usize] = acc;
            }
        }
        Tensor::from_op(
            op,
            vec![n, c],
            out,
            vec![self.clone(), weight.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let zp = &args.parents[0];
                let wp = &args.parents[1];
                let dy = args.out_grad;
                if zp.wants_grad() {
                    let w = wp.data();
                    let mut dz = vec![T::zero(); n * c];
                    for i in 0..n {
                        let base = i * c;
                        for ci in 0..c as isize {
                            let g = dy[base + ci as usize];
                            for j in 0..k as isize {
                                let src = ci + j - half;
                                if src >= 0 && src < c as isize {
                                    dz[base + src as usize] += g * w[j as usize];
                                }
                            }
                        }
                    }
                    zp.accumulate_grad(dz);
                }
                if wp.wants_grad() {
                    let z = zp.data();
                    let mut dw = vec![T::zero(); k];
                    for i in 0..n {
                        let base = i * c;
                        for ci in 0..c as isize {
                            let g = dy[base + ci as usize];
                            for j in 0..k as isize {
                                let src = ci + j - half;
                                if src >= 0 && src < c as isize {
                                    dw[j as usize] += g * z[base + src as usize];
                                }
                            }
                        }
                    }
                    wp.accumulate_grad(dw);
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
    fn dense_identity_weight_is_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = Tensor::<f64>::from_vec(
            &[3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let b = Tensor::<f64>::zeros(&[3]);
        let y = x.dense(&w, Some(&b)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn dense_hand_product() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::zeros(&[2]);
        let y = x.dense(&w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
    }

    #[test]
    fn dense_dimension_mismatch_errors() {
        let x = Tensor::<f64>::ones(&[1, 3]);
        let w = Tensor::<f64>::ones(&[2, 4]);
        assert!(matches!(
            x.dense(&w, None),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv1d_identity_kernel() {
        let z = Tensor::<f64>::from_vec(&[1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let w = Tensor::<f64>::from_vec(&[1], vec![1.0]).unwrap();
        let y = z.conv1d_channels(&w).unwrap();
        assert_eq!(y.data(), z.data());
    }

    #[test]
    fn conv1d_hand_case_with_zero_pads() {
        let z = Tensor::<f64>::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::<f64>::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = z.conv1d_channels(&w).unwrap();
        assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv1d_constant_interior_is_kernel_sum_times_constant() {
        let c = 4.0;
        let z = Tensor::<f64>::full(&[1, 9], c);
        let w = Tensor::<f64>::from_vec(&[3], vec![0.2, 0.5, 0.3]).unwrap();
        let y = z.conv1d_channels(&w).unwrap();
        for &v in &y.data()[1..8] {
            assert!((v - c * 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_rejects_even_kernel() {
        let z = Tensor::<f64>::ones(&[1, 4]);
        let w = Tensor::<f64>::ones(&[2]);
        assert!(matches!(
            z.conv1d_channels(&w),
            Err(Error::InvalidArg { .. })
        ));
    }
}
