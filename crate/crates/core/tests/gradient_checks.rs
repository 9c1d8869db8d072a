//! Central finite-difference verification of every differentiable operation
//! and the composed attention/bottleneck blocks, at f64, on several random
//! shapes each.
//!
//! Non-scalar outputs reduce to a scalar through `mse_sum` against a fixed
//! random constant, which gives every output element a distinct gradient (a
//! plain sum would let structured backward errors cancel, e.g. softmax rows).

use mushroomnet_core::attention::{eca_forward, se_forward};
use mushroomnet_core::gradcheck::{check_gradients, describe, GradCheckReport};
use mushroomnet_core::tensor::{
    batchnorm2d, cross_entropy, mae_mean, mse_mean, mse_sum, BatchNormMode, RunningStats, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform draw avoiding the listed kink locations by a margin comfortably
/// above the finite-difference step.
fn away_from_kinks(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, kinks: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = rng.gen_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > 5e-3) {
                break v;
            }
        })
        .collect()
}

fn assert_pass(name: &str, report: GradCheckReport) {
    assert!(report.passes(TOL), "{}", describe(name, &report));
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Reduce an arbitrary op output to a scalar with per-element sensitivity.
fn reduced(out: Tensor<f64>, seed: u64) -> mushroomnet_core::tensor::Result<Tensor<f64>> {
    let mut r = rng(seed ^ 0xFADE);
    let target = Tensor::from_vec(
        &out.shape().to_vec(),
        uniform(&mut r, out.len(), -1.0, 1.0),
    )?;
    mse_sum(&out, &target)
}

#[test]
fn conv2d_gradients() {
    for (seed, (xs, ws, stride, pad)) in [
        (1u64, ([1usize, 2, 5, 5], [3usize, 2, 3, 3], 1usize, 1usize)),
        (2, ([2, 3, 6, 4], [2, 3, 3, 3], 2, 1)),
        (3, ([1, 1, 7, 5], [2, 1, 3, 5], 1, 2)),
        (4, ([1, 2, 4, 4], [1, 2, 1, 1], 1, 0)),
    ] {
        let mut r = rng(seed);
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w = uniform(&mut r, numel(&ws), -1.0, 1.0);
        let b = uniform(&mut r, ws[0], -0.5, 0.5);
        let report = check_gradients(
            &[("x", &xs, x), ("w", &ws, w), ("b", &[ws[0]], b)],
            |t| reduced(t[0].conv2d(&t[1], Some(&t[2]), stride, pad)?, seed),
        )
        .unwrap();
        assert_pass("conv2d", report);
    }
}

#[test]
fn depthwise_conv2d_gradients() {
    for (seed, (xs, k, stride, pad)) in [
        (11u64, ([1usize, 3, 5, 5], 3usize, 1usize, 1usize)),
        (12, ([2, 2, 6, 6], 3, 2, 1)),
        (13, ([1, 4, 7, 3], 5, 1, 2)),
    ] {
        let ws = [xs[1], 1, k, k];
        let mut r = rng(seed);
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w = uniform(&mut r, numel(&ws), -1.0, 1.0);
        let b = uniform(&mut r, xs[1], -0.5, 0.5);
        let report = check_gradients(
            &[("x", &xs, x), ("w", &ws, w), ("b", &[xs[1]], b)],
            |t| reduced(t[0].depthwise_conv2d(&t[1], Some(&t[2]), stride, pad)?, seed),
        )
        .unwrap();
        assert_pass("depthwise_conv2d", report);
    }
}

#[test]
fn dense_gradients() {
    for (seed, (n, cin, cout)) in [(21u64, (1usize, 4usize, 3usize)), (22, (3, 2, 5)), (23, (2, 6, 1))] {
        let mut r = rng(seed);
        let x = uniform(&mut r, n * cin, -1.0, 1.0);
        let w = uniform(&mut r, cout * cin, -1.0, 1.0);
        let b = uniform(&mut r, cout, -0.5, 0.5);
        let report = check_gradients(
            &[
                ("x", &[n, cin], x),
                ("w", &[cout, cin], w),
                ("b", &[cout], b),
            ],
            |t| reduced(t[0].dense(&t[1], Some(&t[2]))?, seed),
        )
        .unwrap();
        assert_pass("dense", report);
    }
}

#[test]
fn dense_weight_gradient_is_outer_product() {
    // gradient of y.v with respect to w equals outer(v, x)
    let x_data = vec![0.3, -1.2, 0.7];
    let v: [f64; 2] = [0.5, -0.25];
    let x = Tensor::from_vec(&[1, 3], x_data.clone()).unwrap();
    let w = Tensor::from_vec(&[2, 3], vec![0.1; 6]).unwrap().requires_grad();
    let y = x.dense(&w, None).unwrap();
    // y.v through graph ops: elementwise scale then total sum
    let vt = Tensor::from_vec(&[1, 2], v.to_vec()).unwrap();
    let loss = y.scale_channels(&vt).unwrap().sum_all().unwrap();
    loss.backward().unwrap();
    let grad = w.grad().unwrap();
    for (j, &vj) in v.iter().enumerate() {
        for (i, &xi) in x_data.iter().enumerate() {
            assert!((grad[j * 3 + i] - vj * xi).abs() < 1e-12);
        }
    }
}

#[test]
fn conv1d_channels_gradients() {
    for (seed, (n, c, k)) in [(31u64, (1usize, 6usize, 3usize)), (32, (2, 5, 5)), (33, (1, 3, 1))] {
        let mut r = rng(seed);
        let z = uniform(&mut r, n * c, -1.0, 1.0);
        let w = uniform(&mut r, k, -1.0, 1.0);
        let report = check_gradients(&[("z", &[n, c], z), ("w", &[k], w)], |t| {
            reduced(t[0].conv1d_channels(&t[1])?, seed)
        })
        .unwrap();
        assert_pass("conv1d_channels", report);
    }
}

#[test]
fn pooling_gradients() {
    for (seed, shape) in [(41u64, [1usize, 2, 4, 4]), (42, [2, 3, 5, 7]), (43, [1, 1, 6, 3])] {
        let mut r = rng(seed);
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let report = check_gradients(&[("x", &shape, x)], |t| {
            reduced(t[0].global_avg_pool()?, seed)
        })
        .unwrap();
        assert_pass("global_avg_pool", report);
    }
    for (seed, (shape, k, stride)) in [
        (44u64, ([1usize, 2, 6, 6], 2usize, 2usize)),
        (45, ([1, 1, 7, 7], 7, 1)),
        (46, ([2, 2, 5, 5], 3, 2)),
    ] {
        let mut r = rng(seed);
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let report = check_gradients(&[("x", &shape, x)], |t| {
            reduced(t[0].avg_pool(k, stride)?, seed)
        })
        .unwrap();
        assert_pass("avg_pool", report);
    }
}

#[test]
fn activation_gradients() {
    for seed in [51u64, 52, 53] {
        let mut r = rng(seed);
        let shape = [2usize, 7];
        // kinks: relu at 0; relu6 at 0 and 6; h_sigmoid/h_swish at +-3
        let x = away_from_kinks(&mut r, 14, -5.0, 7.0, &[0.0, 6.0, -3.0, 3.0]);
        for (name, f) in [
            ("relu", (|t: &Tensor<f64>| t.relu()) as fn(&Tensor<f64>) -> _),
            ("relu6", |t| t.relu6()),
            ("sigmoid", |t| t.sigmoid()),
            ("h_sigmoid", |t| t.h_sigmoid()),
            ("h_swish", |t| t.h_swish()),
            ("softmax", |t| t.softmax()),
        ] {
            let report = check_gradients(&[("x", &shape, x.clone())], |t| {
                reduced(f(&t[0])?, seed)
            })
            .unwrap();
            assert_pass(name, report);
        }
    }
}

#[test]
fn elementwise_and_selection_gradients() {
    for seed in [61u64, 62, 63] {
        let mut r = rng(seed);
        let shape = [2usize, 3, 2, 2];
        let a = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let b = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let report = check_gradients(
            &[("a", &shape, a.clone()), ("b", &shape, b)],
            |t| reduced(t[0].add(&t[1])?, seed),
        )
        .unwrap();
        assert_pass("add", report);

        let s = uniform(&mut r, 6, 0.1, 1.5);
        let report = check_gradients(
            &[("x", &shape, a.clone()), ("s", &[2, 3], s)],
            |t| reduced(t[0].scale_channels(&t[1])?, seed),
        )
        .unwrap();
        assert_pass("scale_channels", report);

        let report =
            check_gradients(&[("x", &shape, a.clone())], |t| t[0].sum_all()).unwrap();
        assert_pass("sum_all", report);

        let report = check_gradients(&[("x", &[3, 4], a[..12].to_vec())], |t| {
            t[0].pick(1, 2)
        })
        .unwrap();
        assert_pass("pick", report);
    }
}

#[test]
fn loss_gradients() {
    for seed in [71u64, 72, 73] {
        let mut r = rng(seed);
        let shape = [2usize, 5];
        let p = uniform(&mut r, 10, -1.0, 1.0);
        // targets offset so mae never sits on its kink (pred == target)
        let t_data: Vec<f64> = uniform(&mut r, 10, 1.5, 2.5);
        for (name, f) in [
            (
                "mse_sum",
                (|a: &Tensor<f64>, b: &Tensor<f64>| mse_sum(a, b))
                    as fn(&Tensor<f64>, &Tensor<f64>) -> _,
            ),
            ("mse_mean", |a, b| mse_mean(a, b)),
            ("mae_mean", |a, b| mae_mean(a, b)),
        ] {
            let report = check_gradients(
                &[("pred", &shape, p.clone()), ("target", &shape, t_data.clone())],
                |t| f(&t[0], &t[1]),
            )
            .unwrap();
            assert_pass(name, report);
        }
        let classes = vec![seed as usize % 5, (seed as usize + 2) % 5];
        let report = check_gradients(&[("logits", &shape, p.clone())], |t| {
            cross_entropy(&t[0], &classes)
        })
        .unwrap();
        assert_pass("cross_entropy", report);
    }
}

#[test]
fn batchnorm_gradients_train_and_eval() {
    for seed in [81u64, 82, 83] {
        let mut r = rng(seed);
        let shape = [3usize, 2, 2, 2];
        let x = uniform(&mut r, numel(&shape), -1.0, 1.0);
        let gamma = uniform(&mut r, 2, 0.5, 1.5);
        let beta = uniform(&mut r, 2, -0.5, 0.5);
        for mode in [BatchNormMode::Train, BatchNormMode::Eval] {
            let report = check_gradients(
                &[
                    ("x", &shape, x.clone()),
                    ("gamma", &[2], gamma.clone()),
                    ("beta", &[2], beta.clone()),
                ],
                |t| {
                    let running = RunningStats {
                        mean: vec![0.1, -0.2],
                        var: vec![1.3, 0.7],
                    };
                    let (y, _) = batchnorm2d(&t[0], &t[1], &t[2], &running, mode, 0.1, 1e-5)?;
                    reduced(y, seed)
                },
            )
            .unwrap();
            assert_pass("batchnorm2d", report);
        }
    }
}

#[test]
fn composed_se_block_gradients() {
    for (seed, (c, h, w, hidden)) in
        [(91u64, (4usize, 3usize, 3usize, 2usize)), (92, (6, 2, 4, 1)), (93, (3, 5, 2, 3))]
    {
        let mut r = rng(seed);
        let xs = [1usize, c, h, w];
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let w1 = uniform(&mut r, hidden * c, -0.7, 0.7);
        let w2 = uniform(&mut r, c * hidden, -0.7, 0.7);
        let report = check_gradients(
            &[
                ("x", &xs, x),
                ("w1", &[hidden, c], w1),
                ("w2", &[c, hidden], w2),
            ],
            |t| reduced(se_forward(&t[0], &t[1], &t[2])?, seed),
        )
        .unwrap();
        assert_pass("se_forward", report);
    }
}

#[test]
fn composed_eca_block_gradients() {
    for (seed, (c, h, w, k)) in
        [(101u64, (5usize, 3usize, 3usize, 3usize)), (102, (8, 1, 1, 5)), (103, (4, 2, 5, 1))]
    {
        let mut r = rng(seed);
        let xs = [1usize, c, h, w];
        let x = uniform(&mut r, numel(&xs), -1.0, 1.0);
        let kw = uniform(&mut r, k, -0.8, 0.8);
        let report = check_gradients(&[("x", &xs, x), ("w", &[k], kw)], |t| {
            reduced(eca_forward(&t[0], &t[1])?, seed)
        })
        .unwrap();
        assert_pass("eca_forward", report);
    }
}

#[test]
fn composed_bneck_gradients() {
    // expand 1x1 + BN + relu, depthwise 3x3 + BN + relu, SE, project 1x1 +
    // BN, residual — end to end through every op class at once
    for seed in [111u64, 112, 113] {
        let mut r = rng(seed);
        let (cin, cexp, h, w) = (2usize, 3usize, 4usize, 4usize);
        let hidden = 2usize;
        let xs = [2usize, cin, h, w];
        let expand_ws = [cexp, cin, 1, 1];
        let dw_ws = [cexp, 1, 3, 3];
        let se1_ws = [hidden, cexp];
        let se2_ws = [cexp, hidden];
        let proj_ws = [cin, cexp, 1, 1];
        let cexp_s = [cexp];
        let cin_s = [cin];
        let inputs: Vec<(&str, &[usize], Vec<f64>)> = vec![
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
        let report = check_gradients(&inputs, |t| {
            let running_exp = RunningStats {
                mean: vec![0.0; cexp],
                var: vec![1.0; cexp],
            };
            let running_in = RunningStats {
                mean: vec![0.0; cin],
                var: vec![1.0; cin],
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
        })
        .unwrap();
        assert_pass("bneck", report);
    }
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let build = || {
        let mut r = rng(7777);
        let x = Tensor::from_vec(&[2, 3, 4, 4], uniform(&mut r, 96, -1.0, 1.0))
            .unwrap()
            .requires_grad();
        let w = Tensor::from_vec(&[2, 3, 3, 3], uniform(&mut r, 54, -1.0, 1.0))
            .unwrap()
            .requires_grad();
        let y = x.conv2d(&w, None, 1, 1).unwrap().h_swish().unwrap();
        let loss = y.sum_all().unwrap();
        loss.backward().unwrap();
        (
            y.data().to_vec(),
            x.grad().unwrap(),
            w.grad().unwrap(),
        )
    };
    let (y1, gx1, gw1) = build();
    let (y2, gx2, gw2) = build();
    assert_eq!(y1, y2);
    assert_eq!(gx1, gx2);
    assert_eq!(gw1, gw2);
}
