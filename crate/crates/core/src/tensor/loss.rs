//! Scalar losses.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::element::Element;
use crate::tensor::unary::softmax_row;
use crate::tensor::{fmt_shape, BackwardArgs, Error, Result, Tensor};

fn check_same_shape<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: fmt_shape(a.shape()),
            right: fmt_shape(b.shape()),
        });
    }
    Ok(())
}

/// `Σ (pred - target)²`
pub fn mse_sum<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mse_sum", pred, target)?;
    squared_error(pred, target, T::one(), "mse_sum")
}

/// `mean((pred - target)²)`
pub fn mse_mean<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mse_mean", pred, target)?;
    squared_error(
        pred,
        target,
        T::one() / T::cast(pred.len() as f64),
        "mse_mean",
    )
}

fn squared_error<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    scale: T,
    op: &'static str,
) -> Result<Tensor<T>> {
    let mut acc = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        acc += d * d;
    }
    Tensor::from_op(
        op,
        vec![1],
        vec![acc * scale],
        vec![pred.clone(), target.clone()],
        Box::new(move |args: &BackwardArgs<'_, T>| {
            let g = args.out_grad[0];
            let two = T::cast(2.0);
            let pp = &args.parents[0];
            let tp = &args.parents[1];
            if pp.wants_grad() {
                let dp: Vec<T> = pp
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(&p, &t)| two * (p - t) * scale * g)
                    .collect();
                pp.accumulate_grad(dp);
            }
            if tp.wants_grad() {
                let dt: Vec<T> = pp
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(&p, &t)| -two * (p - t) * scale * g)
                    .collect();
                tp.accumulate_grad(dt);
            }
            Ok(())
        }),
    )
}

/// `mean(|pred - target|)`; subgradient 0 where they coincide.
pub fn mae_mean<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mae_mean", pred, target)?;
    let inv = T::one() / T::cast(pred.len() as f64);
    let mut acc = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        acc += (p - t).abs();
    }
    Tensor::from_op(
        "mae_mean",
        vec![1],
        vec![acc * inv],
        vec![pred.clone(), target.clone()],
        Box::new(move |args: &BackwardArgs<'_, T>| {
            let g = args.out_grad[0];
            let pp = &args.parents[0];
            let tp = &args.parents[1];
            let sign = |p: T, t: T| {
                if p > t {
                    T::one()
                } else if p < t {
                    -T::one()
                } else {
                    T::zero()
                }
            };
            if pp.wants_grad() {
                let dp: Vec<T> = pp
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(&p, &t)| sign(p, t) * inv * g)
                    .collect();
                pp.accumulate_grad(dp);
            }
            if tp.wants_grad() {
                let dt: Vec<T> = pp
                    .data()
                    .iter()
                    .zip(tp.data())
                    .map(|(&p, &t)| -sign(p, t) * inv * g)
                    .collect();
                tp.accumulate_grad(dt);
            }
            Ok(())
        }),
    )
}

/// Mean negative log softmax over a batch: `logits: [N,k]`, one class index
/// per row. For a single row this is `-log softmax(logits)[class]`.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, classes: &[usize]) -> Result<Tensor<T>> {
    let op = "cross_entropy";
    let (n, k) = logits.dims2(op)?;
    if classes.len() != n {
        return Err(Error::ShapeMismatch {
            op,
            left: fmt_shape(logits.shape()),
            right: alloc::format!("{} class labels", classes.len()),
        });
    }
    for &c in classes {
        if c >= k {
            return Err(Error::ClassOutOfRange {
                op,
                index: c,
                classes: k,
            });
        }
    }
    let inv_n = T::one() / T::cast(n as f64);
    // softmax rows are saved for the backward pass
    let mut probs = vec![T::zero(); n * k];
    let mut acc = T::zero();
    for r in 0..n {
        let row = &logits.data()[r * k..(r + 1) * k];
        softmax_row(row, &mut probs[r * k..(r + 1) * k]);
        acc -= probs[r * k + classes[r]].ln();
    }
    let classes: Vec<usize> = classes.to_vec();
    Tensor::from_op(
        op,
        vec![1],
        vec![acc * inv_n],
        vec![logits.clone()],
        Box::new(move |args: &BackwardArgs<'_, T>| {
            let p = &args.parents[0];
            if p.wants_grad() {
                let g = args.out_grad[0] * inv_n;
                let mut dx = vec![T::zero(); n * k];
                for r in 0..n {
                    for j in 0..k {
                        let onehot = if j == classes[r] { T::one() } else { T::zero() };
                        dx[r * k + j] = (probs[r * k + j] - onehot) * g;
                    }
                }
                p.accumulate_grad(dx);
            }
            Ok(())
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn equal_pred_and_target_give_zero_losses() {
        let p = t2(&[1, 3], &[0.1, 0.5, -0.2]);
        let q = t2(&[1, 3], &[0.1, 0.5, -0.2]);
        assert_eq!(mse_sum(&p, &q).unwrap().item().unwrap(), 0.0);
        assert_eq!(mse_mean(&p, &q).unwrap().item().unwrap(), 0.0);
        assert_eq!(mae_mean(&p, &q).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn unit_error_arithmetic() {
        let p = t2(&[1, 2], &[1.0, 0.0]);
        let q = t2(&[1, 2], &[0.0, 0.0]);
        assert_eq!(mse_sum(&p, &q).unwrap().item().unwrap(), 1.0);
        assert_eq!(mse_mean(&p, &q).unwrap().item().unwrap(), 0.5);
        assert_eq!(mae_mean(&p, &q).unwrap().item().unwrap(), 0.5);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_k() {
        let logits = t2(&[1, 2], &[0.0, 0.0]);
        let l = cross_entropy(&logits, &[0]).unwrap().item().unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_class() {
        let logits = t2(&[1, 3], &[0.0, 0.0, 0.0]);
        assert!(matches!(
            cross_entropy(&logits, &[3]),
            Err(Error::ClassOutOfRange { .. })
        ));
    }

    #[test]
    fn loss_shape_mismatch_errors() {
        let p = t2(&[1, 2], &[1.0, 0.0]);
        let q = t2(&[1, 3], &[0.0, 0.0, 0.0]);
        assert!(mse_sum(&p, &q).is_err());
        assert!(mae_mean(&p, &q).is_err());
    }
}
