//! Elementwise activations and the row softmax.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::element::Element;
use crate::tensor::{BackwardArgs, Error, Result, Tensor};

impl<T: Element> Tensor<T> {
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        // derivative as a function of (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            op,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    let dx = p
                        .data()
                        .iter()
                        .zip(args.out_data)
                        .zip(args.out_grad)
                        .map(|((&x, &y), &g)| g * df(x, y))
                        .collect();
                    p.accumulate_grad(dx);
                }
                Ok(())
            }),
        )
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn relu6(&self) -> Result<Tensor<T>> {
        let six = T::cast(6.0);
        self.unary(
            "relu6",
            move |x| x.max(T::zero()).min(six),
            move |x, _| {
                if x > T::zero() && x < six {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary("sigmoid", sigmoid_scalar, |_, y| y * (T::one() - y))
    }

    /// `relu6(x + 3) / 6`, the hard sigmoid.
    pub fn h_sigmoid(&self) -> Result<Tensor<T>> {
        let three = T::cast(3.0);
        let sixth = T::cast(1.0 / 6.0);
        self.unary(
            "h_sigmoid",
            move |x| ((x + three) * sixth).max(T::zero()).min(T::one()),
            move |x, _| {
                if x > -three && x < three {
                    sixth
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `x * relu6(x + 3) / 6`, the hard swish.
    pub fn h_swish(&self) -> Result<Tensor<T>> {
        let three = T::cast(3.0);
        let six = T::cast(6.0);
        self.unary(
            "h_swish",
            move |x| x * (x + three).max(T::zero()).min(six) / six,
            move |x, _| {
                if x <= -three {
                    T::zero()
                } else if x >= three {
                    T::one()
                } else {
                    (x + x + three) / six
                }
            },
        )
    }

    /// Softmax over the last axis. Rows sum to 1 and lie in (0,1).
    pub fn softmax(&self) -> Result<Tensor<T>> {
        let shape = self.shape().to_vec();
        let cols = *shape.last().ok_or(Error::InvalidArg {
            op: "softmax",
            msg: "rank-0 input".into(),
        })?;
        if cols == 0 {
            return Err(Error::InvalidArg {
                op: "softmax",
                msg: "empty last axis".into(),
            });
        }
        let rows = self.len() / cols;
        let mut out = vec![T::zero(); self.len()];
        for r in 0..rows {
            let row = &self.data()[r * cols..(r + 1) * cols];
            softmax_row(row, &mut out[r * cols..(r + 1) * cols]);
        }
        Tensor::from_op(
            "softmax",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |args: &BackwardArgs<'_, T>| {
                let p = &args.parents[0];
                if p.wants_grad() {
                    let y = args.out_data;
                    let dy = args.out_grad;
                    let mut dx = vec![T::zero(); y.len()];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = T::zero();
                        for j in 0..cols {
                            dot += dy[base + j] * y[base + j];
                        }
                        for j in 0..cols {
                            dx[base + j] = y[base + j] * (dy[base + j] - dot);
                        }
                    }
                    p.accumulate_grad(dx);
                }
                Ok(())
            }),
        )
    }
}

pub(crate) fn sigmoid_scalar<T: Element>(x: T) -> T {
    // Split on sign so the exponential argument is never positive.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_row<T: Element>(row: &[T], out: &mut [T]) {
    let max = row.iter().cloned().fold(row[0], T::max);
    let mut sum = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn h_swish_saturation_points() {
        let y = t(&[0.0, 3.0, -3.0, 6.0]).h_swish().unwrap();
        assert_eq!(y.data(), &[0.0, 3.0, 0.0, 6.0]);
    }

    #[test]
    fn h_sigmoid_matches_definition() {
        let x = t(&[-4.0, -3.0, 0.0, 3.0, 4.0]);
        let y = x.h_sigmoid().unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let y = Tensor::<f64>::ones(&[1, 3]).softmax().unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::<f64>::from_vec(&[2, 4], vec![0.3, -2.0, 5.0, 1.0, 9.0, 9.0, 9.0, 0.0])
            .unwrap();
        let y = x.softmax().unwrap();
        for r in 0..2 {
            let s: f64 = y.data()[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(y.data()[r * 4..(r + 1) * 4]
                .iter()
                .all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn sigmoid_is_stable_for_large_magnitudes() {
        let y = t(&[-800.0, 800.0]).sigmoid().unwrap();
        assert!(y.data()[0] >= 0.0 && y.data()[0] < 1e-100);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }
}
