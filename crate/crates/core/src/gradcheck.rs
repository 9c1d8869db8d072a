//! Central finite-difference verification of gradients.
//!
//! The numeric side only ever calls forward passes, so it stays independent
//! of the backward implementation it is checking. Checks run at `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::{Result, Tensor};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub elements_checked: usize,
    /// `input index / element index` of the worst element.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with small-magnitude auto-pass: differences below the
/// finite-difference noise floor do not count against the check.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < 1e-9 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs())
}

/// Compare the analytic gradient of `loss(inputs)` against central finite
/// differences with `h = 1e-5 * max(1, |x|)` for every element of every input.
///
/// `loss` must build a scalar tensor from the given leaves and must be a pure
/// function of them (it is re-evaluated many times).
pub fn check_gradients<F>(inputs: &[(&str, &[usize], Vec<f64>)], loss: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    // analytic pass
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(_, shape, data)| Tensor::from_vec(shape, data.clone()).map(Tensor::requires_grad))
        .collect::<Result<_>>()?;
    let out = loss(&leaves)?;
    out.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| alloc::vec![0.0; l.len()]))
        .collect();

    // numeric pass: forward evaluations only
    let eval = |datas: &[Vec<f64>]| -> Result<f64> {
        let leaves: Vec<Tensor<f64>> = inputs
            .iter()
            .zip(datas)
            .map(|((_, shape, _), data)| Tensor::from_vec(shape, data.clone()))
            .collect::<Result<_>>()?;
        loss(&leaves)?.item()
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, _, d)| d.clone()).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        elements_checked: 0,
        worst: None,
    };
    for (i, data) in base.iter().enumerate() {
        for j in 0..data.len() {
            let h = 1e-5 * data[j].abs().max(1.0);
            let mut plus = base.clone();
            plus[i][j] += h;
            let mut minus = base.clone();
            minus[i][j] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let e = rel_err(analytic[i][j], numeric);
            report.elements_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

/// Human-readable one-liner for test output.
pub fn describe(name: &str, report: &GradCheckReport) -> String {
    format!(
        "{name}: max relative error {:.3e} over {} elements",
        report.max_rel_err, report.elements_checked
    )
}

/// Run the full verification sweep: every differentiable operation and the
/// composed SE, ECA, and bottleneck blocks, three random shapes each.
/// Returns one `(name, report)` row per case.
pub fn standard_suite() -> Result<Vec<(String, GradCheckReport)>> {
    use crate::attention::{eca_forward, se_forward};
    use crate::tensor::{batchnorm2d, cross_entropy, mae_mean, mse_mean, mse_sum, BatchNormMode, RunningStats};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rows: Vec<(String, GradCheckReport)> = Vec::new();
    let uniform = |rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    // margin around activation kinks, comfortably above the FD step
    let smooth = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| loop {
                let v = rng.gen_range(-5.0..7.0);
                if [0.0, 6.0, -3.0, 3.0].iter().all(|k| (v - k).abs() > 5e-3) {
                    break v;
                }
            })
            .collect()
    };
    let numel = |shape: &[usize]| shape.iter().product::<usize>();
    // per-element-sensitive scalar reduction
    let reduced = |out: Tensor<f64>, seed: u64| -> Result<Tensor<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xFADE);
        let t = Tensor::from_vec(
            &out.shape().to_vec(),
            (0..out.len()).map(|_| r.gen_range(-1.0..1.0)).collect(),
        )?;
        mse_sum(&out, &t)
    };

    for (seed, (xs, ws, stride, pad)) in [
        (1u64, ([1usize, 2, 5, 5], [3usize, 2, 3, 3], 1usize, 1usize)),
        (2, ([2, 3, 6, 4], [2, 3, 3, 3], 2, 1)),
        (3, ([1, 1, 7, 5], [2, 1, 3, 5], 1, 2)),
    ] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w = uniform(&mut r, numel(&ws), -1.0, 1.0);
        let b = uniform(&mut r, ws[0], -0.5, 0.5);
        rows.push((
            format!("conv2d[{seed}]"),
            check_gradients(&[("x", &xs, x), ("w", &ws, w), ("b", &[ws[0]], b)], |t| {
                reduced(t[0].conv2d(&t[1], Some(&t[2]), stride, pad)?, seed)
            })?,
        ));
    }
    for (seed, (xs, k, stride, pad)) in [
        (11u64, ([1usize, 3, 5, 5], 3usize, 1usize, 1usize)),
        (12, ([2, 2, 6, 6], 3, 2, 1)),
        (13, ([1, 4, 7, 3], 5, 1, 2)),
    ] {
        let ws = [xs[1], 1, k, k];
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w = uniform(&mut r, numel(&ws), -1.0, 1.0);
        rows.push((
            format!("depthwise_conv2d[{seed}]"),
            check_gradients(&[("x", &xs, x), ("w", &ws, w)], |t| {
                reduced(t[0].depthwise_conv2d(&t[1], None, stride, pad)?, seed)
            })?,
        ));
    }
    for (seed, (n, cin, cout)) in [(21u64, (1usize, 4usize, 3usize)), (22, (3, 2, 5)), (23, (2, 6, 1))] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, n * cin, -1.0, 1.0);
        let w = uniform(&mut r, cout * cin, -1.0, 1.0);
        let b = uniform(&mut r, cout, -0.5, 0.5);
        rows.push((
            format!("dense[{seed}]"),
            check_gradients(
                &[("x", &[n, cin], x), ("w", &[cout, cin], w), ("b", &[cout], b)],
                |t| reduced(t[0].dense(&t[1], Some(&t[2]))?, seed),
            )?,
        ));
    }
    for (seed, (n, c, k)) in [(31u64, (1usize, 6usize, 3usize)), (32, (2, 5, 5)), (33, (1, 3, 1))] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let z = uniform(&mut r, n * c, -1.0, 1.0);
        let w = uniform(&mut r, k, -1.0, 1.0);
        rows.push((
            format!("conv1d_channels[{seed}]"),
            check_gradients(&[("z", &[n, c], z), ("w", &[k], w)], |t| {
                reduced(t[0].conv1d_channels(&t[1])?, seed)
            })?,
        ));
    }
    for (seed, shape) in [(41u64, [1usize, 2, 4, 4]), (42, [2, 3, 5, 7]), (43, [1, 1, 6, 3])] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        rows.push((
            format!("global_avg_pool[{seed}]"),
            check_gradients(&[("x", &shape, x)], |t| reduced(t[0].global_avg_pool()?, seed))?,
        ));
    }
    for (seed, (shape, k, stride)) in [
        (44u64, ([1usize, 2, 6, 6], 2usize, 2usize)),
        (45, ([1, 1, 7, 7], 7, 1)),
        (46, ([2, 2, 5, 5], 3, 2)),
    ] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        rows.push((
            format!("avg_pool[{seed}]"),
            check_gradients(&[("x", &shape, x)], |t| reduced(t[0].avg_pool(k, stride)?, seed))?,
        ));
    }
    type Unary = fn(&Tensor<f64>) -> Result<Tensor<f64>>;
    let unaries: [(&str, Unary); 6] = [
        ("relu", |t| t.relu()),
        ("relu6", |t| t.relu6()),
        ("sigmoid", |t| t.sigmoid()),
        ("h_sigmoid", |t| t.h_sigmoid()),
        ("h_swish", |t| t.h_swish()),
        ("softmax", |t| t.softmax()),
    ];
    for seed in [51u64, 52, 53] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = smooth(&mut r, 14);
        for (name, f) in unaries {
            rows.push((
                format!("{name}[{seed}]"),
                check_gradients(&[("x", &[2, 7], x.clone())], |t| reduced(f(&t[0])?, seed))?,
            ));
        }
    }
    for seed in [61u64, 62, 63] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = [2usize, 3, 2, 2];
        let a = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let b = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let s = uniform(&mut r, 6, 0.1, 1.5);
        rows.push((
            format!("add[{seed}]"),
            check_gradients(&[("a", &shape, a.clone()), ("b", &shape, b)], |t| {
                reduced(t[0].add(&t[1])?, seed)
            })?,
        ));
        rows.push((
            format!("scale_channels[{seed}]"),
            check_gradients(&[("x", &shape, a.clone()), ("s", &[2, 3], s)], |t| {
                reduced(t[0].scale_channels(&t[1])?, seed)
            })?,
        ));
        rows.push((
            format!("sum_all[{seed}]"),
            check_gradients(&[("x", &shape, a.clone())], |t| t[0].sum_all())?,
        ));
        rows.push((
            format!("pick[{seed}]"),
            check_gradients(&[("x", &[3, 4], a[..12].to_vec())], |t| t[0].pick(1, 2))?,
        ));
    }
    type LossFn = fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;
    let losses: [(&str, LossFn); 3] = [
        ("mse_sum", |a, b| mse_sum(a, b)),
        ("mse_mean", |a, b| mse_mean(a, b)),
        ("mae_mean", |a, b| mae_mean(a, b)),
    ];
    for seed in [71u64, 72, 73] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let p = uniform(&mut r, 10, -1.0, 1.0);
        let t_data = uniform(&mut r, 10, 1.5, 2.5);
        for (name, f) in losses {
            rows.push((
                format!("{name}[{seed}]"),
                check_gradients(
                    &[("pred", &[2, 5], p.clone()), ("target", &[2, 5], t_data.clone())],
                    |t| f(&t[0], &t[1]),
                )?,
            ));
        }
        let classes = alloc::vec![seed as usize % 5, (seed as usize + 2) % 5];
        rows.push((
            format!("cross_entropy[{seed}]"),
            check_gradients(&[("logits", &[2, 5], p.clone())], |t| {
                cross_entropy(&t[0], &classes)
            })?,
        ));
    }
    for seed in [81u64, 82, 83] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let shape = [3usize, 2, 2, 2];
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let gamma = uniform(&mut r, 2, 0.5, 1.5);
        let beta = uniform(&mut r, 2, -0.5, 0.5);
        for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
            rows.push((
                format!("batchnorm2d[{seed},{mode:?}]"),
                check_gradients(
                    &[
                        ("x", &shape, x.clone()),
                        ("gamma", &[2], gamma.clone()),
                        ("beta", &[2], beta.clone()),
                    ],
                    |t| {
                        let running = RunningStats {
                            mean: alloc::vec![0.1, -0.2],
                            var: alloc::vec![1.3, 0.7],
                        };
                        let (y, _) = batchnorm2d(&t[0], &t[1], &t[2], &running, mode, 0.1, 1e-5)?;
                        reduced(y, seed)
                    },
                )?,
            ));
        }
    }
    for (seed, (c, h, w, hidden)) in
        [(91u64, (4usize, 3usize, 3usize, 2usize)), (92, (6, 2, 4, 1)), (93, (3, 5, 2, 3))]
    {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xs = [1usize, c, h, w];
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w1 = uniform(&mut r, hidden * c, -0.7, 0.7);
        let w2 = uniform(&mut r, c * hidden, -0.7, 0.7);
        rows.push((
            format!("se_forward[{seed}]"),
            check_gradients(
                &[("x", &xs, x), ("w1", &[hidden, c], w1), ("w2", &[c, hidden], w2)],
                |t| reduced(se_forward(&t[0], &t[1], &t[2])?, seed),
            )?,
        ));
    }
    for (seed, (c, h, w, k)) in
        [(101u64, (5usize, 3usize, 3usize, 3usize)), (102, (8, 1, 1, 5)), (103, (4, 2, 5, 1))]
    {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let xs = [1usize, c, h, w];
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let kw = uniform(&mut r, k, -0.8, 0.8);
        rows.push((
            format!("eca_forward[{seed}]"),
            check_gradients(&[("x", &xs, x), ("w", &[k], kw)], |t| {
                reduced(eca_forward(&t[0], &t[1])?, seed)
            })?,
        ));
    }
    for seed in [111u64, 112, 113] {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (cin, cexp) = (2usize, 3usize);
        let hidden = 2usize;
        let xs = [2usize, cin, 4, 4];
        let expand_ws = [cexp, cin, 1, 1];
        let dw_ws = [cexp, 1, 3, 3];
        let se1_ws = [hidden, cexp];
        let se2_ws = [cexp, hidden];
        let proj_ws = [cin, cexp, 1, 1];
        let cexp_s = [cexp];
        let cin_s = [cin];
        let inputs: Vec<(&str, &[usize], Vec<f64>)> = alloc::vec![
            ("x", &xs, uniform(&mut r, numel(&xs), -1.0, 1.0)),
            ("expand_w", &expand_ws, uniform(&mut r, cexp * cin, -0.7, 0.7)),
            ("expand_gamma", &cexp_s, uniform(&mut r, cexp, 0.6, 1.4)),
            ("expand_beta", &cexp_s, uniform(&mut r, cexp, -0.3, 0.3)),
            ("dw_w", &dw_ws, uniform(&mut r, cexp * 9, -0.6, 0.6)),
            ("dw_gamma", &cexp_s, uniform(&mut r, cexp, 0.6, 1.4)),
            ("dw_beta", &cexp_s, uniform(&mut r, cexp, -0.3, 0.3)),
            ("se_w1", &se1_ws, uniform(&mut r, hidden * cexp, -0.7, 0.7)),
            ("se_w2", &se2_ws, uniform(&mut r, cexp * hidden, -0.7, 0.7)),
            ("proj_w", &proj_ws, uniform(&mut r, cin * cexp, -0.7, 0.7)),
            ("proj_gamma", &cin_s, uniform(&mut r, cin, 0.6, 1.4)),
            ("proj_beta", &cin_s, uniform(&mut r, cin, -0.3, 0.3)),
        ];
        rows.push((
            format!("bneck[{seed}]"),
            check_gradients(&inputs, |t| {
                let running_exp = RunningStats {
                    mean: alloc::vec![0.0; cexp],
                    var: alloc::vec![1.0; cexp],
                };
                let running_in = RunningStats {
                    mean: alloc::vec![0.0; cin],
                    var: alloc::vec![1.0; cin],
                };
                let mode = BatchNormMode::Train;
                let v = t[0].conv2d(&t[1], None, 1, 0)?;
                let (v, _) = batchnorm2d(&v, &t[2], &t[3], &running_exp, mode, 0.1, 1e-5)?;
                let v = v.relu()?;
                let v = v.depthwise_conv2d(&t[4], None, 1, 1)?;
                let (v, _) = batchnorm2d(&v, &t[5], &t[6], &running_exp, mode, 0.1, 1e-5)?;
                let v = v.relu()?;
                let v = se_forward(&v, &t[7], &t[8])?;
                let v = v.conv2d(&t[9], None, 1, 0)?;
                let (v, _) = batchnorm2d(&v, &t[10], &t[11], &running_in, mode, 0.1, 1e-5)?;
                let v = v.add(&t[0])?;
                reduced(v, seed)
            })?,
        ));
    }
    Ok(rows)
}
