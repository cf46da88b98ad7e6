//! Finite-difference checks for every differentiable op at 64-bit precision.

use its_tensor::{forward_op, grad_check, Attrs, Dropout, OpKind, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;
const SEEDS: u64 = 20;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).unwrap()
}

/// Values with magnitude in [0.1, 1.1), random sign; keeps kinks out of reach.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = 0.1 + rng.random::<f64>();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

/// Random readout weights bounded away from zero so no output is ignored.
fn readout(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = 0.5 + rng.random::<f64>();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(v, shape).unwrap()
}

fn weighted_sum(y: &Tensor, r: &Tensor) -> Result<Tensor> {
    Ok(y.mul(r)?.sum())
}

/// Checks d(sum(R * op(inputs))) / d(inputs[i]) for every input.
fn check_all_inputs(kind: OpKind, inputs: &[Tensor], attrs: &Attrs, rng: &mut ChaCha8Rng) -> f64 {
    let out = forward_op(kind, inputs, attrs).unwrap();
    let scalar_out = out.numel() == 1 && out.rank() == 0;
    let r = readout(rng, out.shape());
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let f = |x: &Tensor| {
            let mut args = inputs.to_vec();
            args[i] = x.clone();
            let y = forward_op(kind, &args, attrs)?;
            if scalar_out {
                Ok(y)
            } else {
                weighted_sum(&y, &r)
            }
        };
        let e = grad_check(f, &inputs[i], EPS).unwrap();
        worst = worst.max(e);
    }
    worst
}

fn run(kind: OpKind, build: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Attrs)) {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (inputs, attrs) = build(&mut rng);
        let e = check_all_inputs(kind, &inputs, &attrs, &mut rng);
        assert!(e < TOL, "{kind} seed {seed}: rel error {e:e}");
        worst = worst.max(e);
    }
    println!("{kind:<40} worst rel error {worst:.3e}");
}

#[test]
fn matmul() {
    run(OpKind::Matmul, |rng| {
        (vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 5], -1.0, 1.0)], Attrs::default())
    });
}

#[test]
fn add_and_mul_broadcast() {
    for kind in [OpKind::Add, OpKind::Mul] {
        run(kind, |rng| {
            (vec![uniform(rng, &[2, 3, 4], -1.0, 1.0), uniform(rng, &[3, 1], -1.0, 1.0)], Attrs::default())
        });
    }
}

#[test]
fn conv2d() {
    run(OpKind::Conv2d, |rng| {
        let attrs = Attrs {
            stride: 2,
            pad: 1,
            ..Attrs::default()
        };
        (
            vec![
                uniform(rng, &[2, 2, 5, 6], -1.0, 1.0),
                uniform(rng, &[3, 2, 3, 3], -1.0, 1.0),
                uniform(rng, &[3], -1.0, 1.0),
            ],
            attrs,
        )
    });
}

#[test]
fn conv2d_then_mean() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[1, 2, 6, 6], -1.0, 1.0);
        let w = uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0);
        let e = grad_check(|t| Ok(t.conv2d(&w, None, 1, 1)?.mean()), &x, EPS).unwrap();
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn conv1d_dilated_and_strided() {
    for (stride, dilation) in [(1, 2), (2, 1), (4, 1)] {
        run(OpKind::Conv1d, |rng| {
            let attrs = Attrs {
                stride,
                pad: dilation,
                dilation,
                ..Attrs::default()
            };
            (
                vec![
                    uniform(rng, &[2, 3, 12], -1.0, 1.0),
                    uniform(rng, &[4, 3, 3], -1.0, 1.0),
                    uniform(rng, &[4], -1.0, 1.0),
                ],
                attrs,
            )
        });
    }
}

#[test]
fn separable_conv1d() {
    run(OpKind::SeparableConv1d, |rng| {
        let attrs = Attrs {
            pad: 1,
            ..Attrs::default()
        };
        (
            vec![
                uniform(rng, &[2, 3, 7], -1.0, 1.0),
                uniform(rng, &[3, 3], -1.0, 1.0),
                uniform(rng, &[5, 3], -1.0, 1.0),
                uniform(rng, &[5], -1.0, 1.0),
            ],
            attrs,
        )
    });
}

#[test]
fn transposed_conv1d() {
    for pad in [0, 1] {
        run(OpKind::TransposedConv1d, |rng| {
            let attrs = Attrs {
                stride: 4,
                pad,
                ..Attrs::default()
            };
            (
                vec![
                    uniform(rng, &[2, 3, 4], -1.0, 1.0),
                    uniform(rng, &[3, 2, 4], -1.0, 1.0),
                    uniform(rng, &[2], -1.0, 1.0),
                ],
                attrs,
            )
        });
    }
}

#[test]
fn linear() {
    run(OpKind::Linear, |rng| {
        (
            vec![
                uniform(rng, &[2, 3, 4], -1.0, 1.0),
                uniform(rng, &[5, 4], -1.0, 1.0),
                uniform(rng, &[5], -1.0, 1.0),
            ],
            Attrs::default(),
        )
    });
}

#[test]
fn elementwise_unary() {
    for kind in [OpKind::Relu, OpKind::Softplus, OpKind::Sigmoid, OpKind::Tanh, OpKind::Exp] {
        run(kind, |rng| (vec![away_from_zero(rng, &[3, 5])], Attrs::default()));
    }
    run(OpKind::Log1p, |rng| (vec![uniform(rng, &[3, 5], -0.5, 2.0)], Attrs::default()));
}

#[test]
fn softplus_sum() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[16], -3.0, 3.0);
        let e = grad_check(|t| Ok(t.softplus().sum()), &x, EPS).unwrap();
        assert!(e < 1e-6, "seed {seed}: {e:e}");
    }
}

#[test]
fn layernorm_affine() {
    for axis in [1, 2] {
        run(OpKind::Layernorm, |rng| {
            let n = [2, 4, 3][axis];
            let attrs = Attrs {
                axis,
                ..Attrs::default()
            };
            (
                vec![
                    uniform(rng, &[2, 4, 3], -2.0, 2.0),
                    uniform(rng, &[n], 0.5, 1.5),
                    uniform(rng, &[n], -1.0, 1.0),
                ],
                attrs,
            )
        });
    }
}

#[test]
fn layernorm_then_sum_of_squares() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform(&mut rng, &[3, 6], -2.0, 2.0);
        let r = readout(&mut rng, &[3, 6]);
        let e = grad_check(
            |t| {
                let y = t.layernorm(None, None, 1, 1e-5)?.mul(&r)?;
                Ok(y.mul(&y)?.sum())
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(e < TOL, "seed {seed}: {e:e}");
    }
}

#[test]
fn dropout_train_mask() {
    run(OpKind::Dropout, |rng| {
        let attrs = Attrs {
            dropout: Dropout {
                p: 0.3,
                train: true,
                seed: rng.random(),
                layer_id: 3,
                step: 11,
            },
            ..Attrs::default()
        };
        (vec![uniform(rng, &[4, 6], -1.0, 1.0)], attrs)
    });
}

#[test]
fn mean_pool() {
    run(OpKind::MeanPool, |rng| (vec![uniform(rng, &[2, 3, 4, 5], -1.0, 1.0)], Attrs::default()));
}

#[test]
fn losses() {
    run(OpKind::CrossEntropy, |rng| {
        let targets = (0..5).map(|_| rng.random_range(0..7)).collect();
        let attrs = Attrs {
            indices: targets,
            ..Attrs::default()
        };
        (vec![uniform(rng, &[5, 7], -2.0, 2.0)], attrs)
    });
    run(OpKind::Mse, |rng| (vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[3, 4], -1.0, 1.0)], Attrs::default()));
    run(OpKind::L1, |rng| {
        let a = uniform(rng, &[3, 4], -1.0, 1.0);
        let gap = away_from_zero(rng, &[3, 4]);
        let b = a.add(&gap).unwrap().detach();
        (vec![a, b], Attrs::default())
    });
    run(OpKind::KlDiagGaussian, |rng| {
        (vec![uniform(rng, &[4, 3], -1.0, 1.0), uniform(rng, &[4, 3], -1.0, 1.0)], Attrs::default())
    });
}

#[test]
fn shape_ops() {
    run(OpKind::Gather, |rng| {
        let idx = (0..7).map(|_| rng.random_range(0..4)).collect();
        let attrs = Attrs {
            indices: idx,
            axis: 1,
            ..Attrs::default()
        };
        (vec![uniform(rng, &[2, 4, 3], -1.0, 1.0)], attrs)
    });
    run(OpKind::Concat, |rng| {
        let attrs = Attrs {
            axis: 1,
            ..Attrs::default()
        };
        (vec![uniform(rng, &[2, 3, 2], -1.0, 1.0), uniform(rng, &[2, 1, 2], -1.0, 1.0)], attrs)
    });
    run(OpKind::Slice, |rng| {
        let attrs = Attrs {
            axis: 2,
            start: 1,
            end: 4,
            ..Attrs::default()
        };
        (vec![uniform(rng, &[2, 3, 5], -1.0, 1.0)], attrs)
    });
    run(OpKind::Reshape, |rng| {
        let attrs = Attrs {
            shape: vec![6, 4],
            ..Attrs::default()
        };
        (vec![uniform(rng, &[2, 3, 4], -1.0, 1.0)], attrs)
    });
}

#[test]
fn every_kind_is_covered_here() {
    // keep in sync with the tests above
    let covered = [
        "matmul",
        "add",
        "mul",
        "conv2d",
        "conv1d",
        "separable_conv1d",
        "transposed_conv1d",
        "linear",
        "relu",
        "softplus",
        "sigmoid",
        "tanh",
        "layernorm",
        "dropout",
        "mean_pool",
        "cross_entropy",
        "mse",
        "l1",
        "kl_diag_gaussian_vs_standard_normal",
        "exp",
        "log1p",
        "gather",
        "concat",
        "slice",
        "reshape",
    ];
    for k in OpKind::ALL {
        assert!(covered.contains(&k.name()), "{k} lacks a gradient test");
    }
}
