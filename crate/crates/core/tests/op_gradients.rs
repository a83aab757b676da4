use proptest::prelude::*;
use relgan_core::autodiff::{finite_difference_check, CheckConfig, Reduction, Tensor};

fn param(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::parameter(shape, data.to_vec()).unwrap()
}

fn constant(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

/// `sum(out ⊙ r)` for a fixed `r`, so every output entry gets its own weight.
fn project(out: Tensor<f64>, r: &[f64]) -> relgan_core::Result<Tensor<f64>> {
    let r = constant(out.shape(), &r[..out.numel()]);
    Ok(out.mul(&r)?.sum())
}

fn assert_checks(f: impl Fn(&[Tensor<f64>]) -> relgan_core::Result<Tensor<f64>>, params: &[Tensor<f64>]) {
    let report = finite_difference_check(f, params, &CheckConfig::default()).unwrap();
    assert!(report.passed, "{report:?}");
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

/// Values at least `gap` away from every point in `kinks`.
fn away_from(n: usize, kinks: &'static [f64], gap: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-1.5f64..1.5).prop_filter("near a kink", move |v| kinks.iter().all(|k| (v - k).abs() > gap)), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn binary_elementwise(x in values(6), y in away_from(6, &[0.0], 0.2), r in values(6)) {
        for op in 0..4 {
            let f = |p: &[Tensor<f64>]| {
                let out = match op {
                    0 => p[0].add(&p[1])?,
                    1 => p[0].sub(&p[1])?,
                    2 => p[0].mul(&p[1])?,
                    _ => p[0].div(&p[1])?,
                };
                project(out, &r)
            };
            assert_checks(f, &[param(&[2, 3], &x), param(&[2, 3], &y)]);
        }
    }

    #[test]
    fn broadcast_bias(x in values(6), b in values(3), r in values(6)) {
        let f = |p: &[Tensor<f64>]| project(p[0].add(&p[1])?, &r);
        assert_checks(f, &[param(&[2, 3], &x), param(&[1, 3], &b)]);
    }

    #[test]
    fn smooth_unary(x in values(8), r in values(8)) {
        for op in 0..7 {
            let f = |p: &[Tensor<f64>]| {
                let v = &p[0];
                let out = match op {
                    0 => v.add_scalar(0.7),
                    1 => v.mul_scalar(-1.3),
                    2 => v.neg(),
                    3 => v.square(),
                    4 => v.exp(),
                    5 => v.tanh(),
                    _ => v.sigmoid(),
                };
                project(out, &r)
            };
            assert_checks(f, &[param(&[8], &x)]);
        }
    }

    #[test]
    fn log_of_positive(x in prop::collection::vec(0.2f64..3.0, 5), r in values(5)) {
        let f = |p: &[Tensor<f64>]| project(p[0].ln(), &r);
        assert_checks(f, &[param(&[5], &x)]);
    }

    #[test]
    fn piecewise_unary(x in away_from(8, &[0.0, -0.5, 0.5], 0.01), r in values(8)) {
        for op in 0..4 {
            let f = |p: &[Tensor<f64>]| {
                let v = &p[0];
                let out = match op {
                    0 => v.abs(),
                    1 => v.relu(),
                    2 => v.leaky_relu(0.2),
                    _ => v.clamp(-0.5, 0.5),
                };
                project(out, &r)
            };
            assert_checks(f, &[param(&[8], &x)]);
        }
    }

    #[test]
    fn reductions(x in away_from(6, &[0.0], 0.01), pos in prop::collection::vec(0.2f64..2.0, 6)) {
        for kind in [Reduction::Mean, Reduction::MeanAbs, Reduction::MeanSquare] {
            let f = |p: &[Tensor<f64>]| p[0].reduce(kind);
            assert_checks(f, &[param(&[2, 3], &x)]);
        }
        let f = |p: &[Tensor<f64>]| p[0].reduce(Reduction::LogMean);
        assert_checks(f, &[param(&[2, 3], &pos)]);
        let f = |p: &[Tensor<f64>]| p[0].mean();
        assert_checks(f, &[param(&[2, 3], &x)]);
    }

    #[test]
    fn shape_ops(x in values(12), y in values(6), r in values(18)) {
        let f = |p: &[Tensor<f64>]| project(p[0].reshape(&[3, 4])?, &r);
        assert_checks(f, &[param(&[2, 6], &x)]);
        let f = |p: &[Tensor<f64>]| project(Tensor::cat_batch(&[p[0].clone(), p[1].clone()])?, &r);
        assert_checks(f, &[param(&[2, 1, 2, 3], &x), param(&[1, 1, 2, 3], &y)]);
    }

    #[test]
    fn matmul(x in values(6), y in values(12), r in values(8)) {
        let f = |p: &[Tensor<f64>]| project(p[0].matmul(&p[1])?, &r);
        assert_checks(f, &[param(&[2, 3], &x), param(&[3, 4], &y)]);
    }

    #[test]
    fn conv2d(x in values(50), w in values(54), b in values(3), r in values(75)) {
        for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
            let f = |p: &[Tensor<f64>]| project(p[0].conv2d(&p[1], Some(&p[2]), stride, pad)?, &r);
            assert_checks(f, &[param(&[1, 2, 5, 5], &x), param(&[3, 2, 3, 3], &w), param(&[3], &b)]);
        }
    }

    #[test]
    fn conv_transpose2d(x in values(18), w in values(96), b in values(3), r in values(108)) {
        let f = |p: &[Tensor<f64>]| project(p[0].conv_transpose2d(&p[1], Some(&p[2]), 2, 1)?, &r);
        assert_checks(f, &[param(&[1, 2, 3, 3], &x), param(&[2, 3, 4, 4], &w), param(&[3], &b)]);
    }

    #[test]
    fn instance_norm(x in values(32), r in values(32)) {
        let f = |p: &[Tensor<f64>]| project(p[0].instance_norm(1e-5)?, &r);
        assert_checks(f, &[param(&[2, 1, 4, 4], &x)]);
    }

    #[test]
    fn pooling(r in values(8), seed in 0u64..1000) {
        // Distinct values keep max pooling away from ties.
        let x: Vec<f64> = (0..32).map(|i| ((i as u64 * 37 + seed) % 101) as f64 / 50.0 - 1.0).collect();
        let f = |p: &[Tensor<f64>]| project(p[0].avg_pool2d(2)?, &r);
        assert_checks(f, &[param(&[1, 2, 4, 4], &x)]);
        let f = |p: &[Tensor<f64>]| project(p[0].max_pool2d(2)?, &r);
        assert_checks(f, &[param(&[1, 2, 4, 4], &x)]);
    }

    /// Gradients of a sum of losses equal the sum of separately taped grads.
    #[test]
    fn adjoint_linearity(x in values(9), w in values(9)) {
        let build = |x: &Tensor<f64>, w: &Tensor<f64>| {
            let h = x.conv2d(w, None, 1, 1).unwrap();
            (h.tanh().reduce(Reduction::MeanAbs).unwrap(), h.square().mul(x).unwrap().sum())
        };
        let (x1, w1) = (param(&[1, 1, 3, 3], &x), param(&[1, 1, 3, 3], &w));
        let (l1, l2) = build(&x1, &w1);
        l1.add(&l2).unwrap().backward().unwrap();

        let (x2, w2) = (param(&[1, 1, 3, 3], &x), param(&[1, 1, 3, 3], &w));
        let (m1, _) = build(&x2, &w2);
        m1.backward().unwrap();
        let (g1x, g1w) = (x2.grad().unwrap(), w2.grad().unwrap());
        let (x3, w3) = (param(&[1, 1, 3, 3], &x), param(&[1, 1, 3, 3], &w));
        let (_, m2) = build(&x3, &w3);
        m2.backward().unwrap();
        let (g2x, g2w) = (x3.grad().unwrap(), w3.grad().unwrap());

        for (joint, (a, b)) in x1.grad().unwrap().iter().zip(g1x.iter().zip(&g2x)) {
            prop_assert!((joint - (a + b)).abs() <= 1e-12 * (1.0 + joint.abs()));
        }
        for (joint, (a, b)) in w1.grad().unwrap().iter().zip(g1w.iter().zip(&g2w)) {
            prop_assert!((joint - (a + b)).abs() <= 1e-12 * (1.0 + joint.abs()));
        }
    }

    #[test]
    fn forward_is_deterministic_and_pure(x in values(16), w in values(18)) {
        let xt = param(&[1, 1, 4, 4], &x);
        let wt = param(&[2, 1, 3, 3], &w);
        let run = || xt.conv2d(&wt, None, 1, 1).unwrap().instance_norm(1e-5).unwrap().sigmoid().to_vec();
        let first = run();
        prop_assert_eq!(first, run());
        prop_assert_eq!(xt.to_vec(), x);
        prop_assert_eq!(wt.to_vec(), w);
    }
}
