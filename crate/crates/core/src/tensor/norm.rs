//! Batch normalization over `[N,C,H,W]`.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::tensor::{fmt_shape, BackwardArgs, Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and report updated running statistics.
    Train,
    /// Normalize with the stored running statistics.
    Eval,
}

/// Per-channel running mean and variance kept between training steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T: Element> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Element> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

/// Batch normalization.
///
/// In train mode the batch statistics normalize the input and the updated
/// running statistics are returned (the op itself is pure; callers decide
/// where to store them). Running variance is updated with the unbiased batch
/// variance. In eval mode the stored running statistics are used and `None`
/// is returned.
pub fn batchnorm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &RunningStats<T>,
    mode: BatchNormMode,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, Option<RunningStats<T>>)> {
    let op = "batchnorm2d";
    let (n, c, h, w) = x.dims4(op)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op,
            left: fmt_shape(x.shape()),
            right: alloc::format!(
                "gamma {} / beta {}",
                fmt_shape(gamma.shape()),
                fmt_shape(beta.shape())
            ),
        });
    }
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::InvalidArg {
            op,
            msg: alloc::format!("running statistics sized for {} channels, input has {c}", running.mean.len()),
        });
    }
    let spatial = h * w;
    let m = n * spatial; // values per channel

    let (mean, var) = match mode {
        BatchNormMode::Train => {
            if m < 2 {
                return Err(Error::InvalidArg {
                    op,
                    msg: "train mode needs at least two values per channel".into(),
                });
            }
            let inv_m = T::one() / T::cast(m as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut acc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for j in 0..spatial {
                        acc += x.data()[base + j];
                    }
                }
                let mu = acc * inv_m;
                let mut vacc = T::zero();
                for ni in 0..n {
                    let base = (ni * c + ci) * spatial;
                    for j in 0..spatial {
                        let d = x.data()[base + j] - mu;
                        vacc += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = vacc * inv_m;
            }
            (mean, var)
        }
        BatchNormMode::Eval => (running.mean.clone(), running.var.clone()),
    };

    let epsilon = T::cast(eps);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * spatial;
            let g = gamma.data()[ci];
            let b = beta.data()[ci];
            for j in 0..spatial {
                out[base + j] = (x.data()[base + j] - mean[ci]) * inv_std[ci] * g + b;
            }
        }
    }

    let new_running = match mode {
        BatchNormMode::Train => {
            let mom = T::cast(momentum);
            let keep = T::one() - mom;
            // unbiased variance feeds the running estimate
            let unbias = T::cast(m as f64 / (m as f64 - 1.0));
            Some(RunningStats {
                mean: running
                    .mean
                    .iter()
                    .zip(&mean)
                    .map(|(&r, &b)| r * keep + b * mom)
                    .collect(),
                var: running
                    .var
                    .iter()
                    .zip(&var)
                    .map(|(&r, &b)| r * keep + b * unbias * mom)
                    .collect(),
            })
        }
        BatchNormMode::Eval => None,
    };

    let saved_mean = mean;
    let saved_inv_std = inv_std;
    let train = mode == BatchNormMode::Train;
    let y = Tensor::from_op(
        op,
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |args: &BackwardArgs<'_, T>| {
            let xp = &args.parents[0];
            let gp = &args.parents[1];
            let bp = &args.parents[2];
            let dy = args.out_grad;
            let xd = xp.data();
            let inv_m = T::one() / T::cast(m as f64);

            // per-channel reductions shared by all three gradients
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * spatial;
                    for j in 0..spatial {
                        let xhat = (xd[base + j] - saved_mean[ci]) * saved_inv_std[ci];
                        sum_dy[ci] += dy[base + j];
                        sum_dy_xhat[ci] += dy[base + j] * xhat;
                    }
                }
            }
            if bp.wants_grad() {
                bp.accumulate_grad(sum_dy.clone());
            }
            if gp.wants_grad() {
                gp.accumulate_grad(sum_dy_xhat.clone());
            }
            if xp.wants_grad() {
                let gd = gp.data();
                let mut dx = vec![T::zero(); xd.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * spatial;
                        let scale = gd[ci] * saved_inv_std[ci];
                        for j in 0..spatial {
                            if train {
                                let xhat = (xd[base + j] - saved_mean[ci]) * saved_inv_std[ci];
                                dx[base + j] = scale
                                    * (dy[base + j]
                                        - sum_dy[ci] * inv_m
                                        - xhat * sum_dy_xhat[ci] * inv_m);
                            } else {
                                dx[base + j] = scale * dy[base + j];
                            }
                        }
                    }
                }
                xp.accumulate_grad(dx);
            }
            Ok(())
        }),
    )?;
    Ok((y, new_running))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn train_mode_output_has_mean_beta_and_std_gamma() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        // 256 values per channel, unit-scale data
        let x = Tensor::<f64>::uniform(&mut rng, &[64, 2, 2, 2], -2.0, 2.0);
        let gamma = Tensor::<f64>::from_vec(&[2], vec![1.5, 0.5]).unwrap();
        let beta = Tensor::<f64>::from_vec(&[2], vec![-0.25, 2.0]).unwrap();
        let running = RunningStats::new(2);
        let (y, _) = batchnorm2d(&x, &gamma, &beta, &running, BatchNormMode::Train, 0.1, 1e-5)
            .unwrap();
        let spatial = 4;
        for ci in 0..2 {
            let mut vals = Vec::new();
            for ni in 0..64 {
                let base = (ni * 2 + ci) * spatial;
                vals.extend_from_slice(&y.data()[base..base + spatial]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|&a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            assert!((m - b).abs() < 1e-5, "mean {m} vs beta {b}");
            assert!((v.sqrt() - g).abs() < 1e-5, "std {} vs gamma {g}", v.sqrt());
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics_and_returns_none() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![3.0, 5.0]).unwrap();
        let gamma = Tensor::<f64>::ones(&[1]);
        let beta = Tensor::<f64>::zeros(&[1]);
        let running = RunningStats {
            mean: vec![4.0],
            var: vec![1.0],
        };
        let (y, updated) =
            batchnorm2d(&x, &gamma, &beta, &running, BatchNormMode::Eval, 0.1, 0.0).unwrap();
        assert!(updated.is_none());
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 1.0, 3.0]).unwrap();
        let gamma = Tensor::<f64>::ones(&[1]);
        let beta = Tensor::<f64>::zeros(&[1]);
        let running = RunningStats::new(1);
        let (_, updated) =
            batchnorm2d(&x, &gamma, &beta, &running, BatchNormMode::Train, 0.1, 1e-5).unwrap();
        let updated = updated.unwrap();
        // batch mean 2.0: 0.9*0 + 0.1*2 = 0.2
        assert!((updated.mean[0] - 0.2).abs() < 1e-12);
        // biased var 1.0, unbiased 4/3: 0.9*1 + 0.1*4/3
        assert!((updated.var[0] - (0.9 + 0.4 / 3.0)).abs() < 1e-12);
    }
}
