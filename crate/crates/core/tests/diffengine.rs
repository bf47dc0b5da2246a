mod common;

use cogmap::diffengine::{batch_norm, ConvGeom, Graph, NormMode, Tensor};
use common::*;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-6;

#[test]
fn conv_identity_kernel_is_identity() {
    let mut r = rng(1);
    let x = uniform(&[2, 3, 4, 5], &mut r);
    let mut k = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        k.data_mut()[c * 3 + c] = 1.0;
    }
    let g = Graph::new();
    let y = g.constant(x.clone()).conv2d(g.constant(k), 1, 0).unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn conv_zero_kernel_gives_zero() {
    let mut r = rng(2);
    let g = Graph::new();
    let x = g.constant(uniform(&[1, 2, 5, 5], &mut r));
    let y = x
        .conv2d(g.constant(Tensor::zeros(&[4, 2, 3, 3])), 1, 1)
        .unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_direct_summation() {
    let mut r = rng(3);
    for (case, &(stride, pad, kh)) in [(1, 1, 3), (2, 1, 4), (1, 0, 3), (2, 0, 3), (3, 2, 4)]
        .iter()
        .cycle()
        .take(25)
        .enumerate()
    {
        let x = uniform(&[1 + case % 2, 2, 5 + case % 3, 5], &mut r);
        let k = uniform(&[3, 2, kh, kh], &mut r);
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .conv2d(g.constant(k.clone()), stride, pad)
            .unwrap();
        let expected = conv_oracle(&x, &k, stride, pad);
        assert_eq!(y.shape(), expected.shape());
        assert!(max_abs_diff(y.value().data(), expected.data()) < 1e-5);
    }
}

#[test]
fn conv_f32_matches_oracle() {
    let mut r = rng(4);
    let x = uniform(&[1, 2, 5, 5], &mut r);
    let k = uniform(&[3, 2, 3, 3], &mut r);
    let g = Graph::<f32>::new();
    let y = g
        .constant(x.cast())
        .conv2d(g.constant(k.cast()), 1, 1)
        .unwrap();
    let expected = conv_oracle(&x, &k, 1, 1);
    let got: Vec<f64> = y.value().data().iter().map(|&v| v as f64).collect();
    assert!(max_abs_diff(&got, expected.data()) < 1e-5);
}

#[test]
fn deconv_unit_kernel_is_identity() {
    let mut r = rng(5);
    let x = uniform(&[2, 1, 3, 4], &mut r);
    let g = Graph::new();
    let y = g
        .constant(x.clone())
        .deconv2d(g.constant(Tensor::full(&[1, 1, 1, 1], 1.0)), 1, 0)
        .unwrap();
    assert_eq!(*y.value(), x);
}

#[test]
fn deconv_of_zero_is_zero() {
    let mut r = rng(6);
    let g = Graph::new();
    let y = g
        .constant(Tensor::zeros(&[1, 3, 4, 4]))
        .deconv2d(g.constant(uniform(&[3, 2, 4, 4], &mut r)), 2, 1)
        .unwrap();
    assert_eq!(y.shape(), vec![1, 2, 8, 8]);
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn deconv_matches_scatter_oracle() {
    let mut r = rng(8);
    for _ in 0..20 {
        let stride = r.random_range(1..3);
        let kh = r.random_range(stride..5);
        let pad = r.random_range(0..kh.min(2));
        let h = r.random_range(2..6);
        let x = uniform(&[2, 3, h, h], &mut r);
        let k = uniform(&[3, 2, kh, kh], &mut r);
        let g = Graph::new();
        let Ok(y) = g.constant(x.clone()).deconv2d(g.constant(k.clone()), stride, pad) else {
            continue;
        };
        let expected = deconv_oracle(&x, &k, stride, pad);
        assert_eq!(y.shape(), expected.shape());
        assert!(max_abs_diff(y.value().data(), expected.data()) < 1e-12);
    }
}

#[test]
fn conv_and_transpose_are_adjoint() {
    let mut r = rng(7);
    for &(stride, pad, kh, hw) in &[(1, 1, 3, 6), (2, 1, 4, 8), (2, 0, 3, 7), (1, 0, 2, 5)] {
        for _ in 0..5 {
            let x = uniform(&[2, 3, hw, hw], &mut r);
            let k = uniform(&[4, 3, kh, kh], &mut r);
            let g = Graph::new();
            let kv = g.constant(k);
            let cx = g.constant(x.clone()).conv2d(kv, stride, pad).unwrap();
            let y = uniform(&cx.shape(), &mut r);
            let ty = g
                .constant(y.clone())
                .conv_transpose(kv, ConvGeom::new(stride, pad), (hw, hw))
                .unwrap();
            let lhs = cx.value().dot(&y).unwrap();
            let rhs = x.dot(&ty.value()).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-5 * (1.0 + lhs.abs()),
                "{lhs} vs {rhs}"
            );
        }
    }
}

#[test]
fn dense_matches_triple_loop() {
    let mut r = rng(8);
    for _ in 0..20 {
        let x = uniform(&[4, 8], &mut r);
        let w = uniform(&[8, 5], &mut r);
        let g = Graph::new();
        let y = g
            .constant(x.clone())
            .dense(g.constant(w.clone()), g.constant(Tensor::zeros(&[5])))
            .unwrap();
        assert!(max_abs_diff(y.value().data(), matmul_oracle(&x, &w).data()) < 1e-12);
    }
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut r = rng(10);
    let a = away_from_zero(&[3, 4], &mut r, 0.2);
    let b = away_from_zero(&[3, 4], &mut r, 0.2);
    let pos = Tensor::from_fn(&[3, 4], |i| 0.3 + i as f64 * 0.1);
    // Large magnitudes keep the central-difference truncation error of 1/x
    // well below the tolerance.
    let large = a.map(|v| v.signum() * (2.0 + v.abs()));
    let cases: Vec<(&str, Vec<Tensor<f64>>, Box<Builder<'_>>)> = vec![
        (
            "add",
            vec![a.clone(), b.clone()],
            builder(|_, v| probe(v[0].add(v[1]).unwrap())),
        ),
        (
            "sub",
            vec![a.clone(), b.clone()],
            builder(|_, v| probe(v[0].sub(v[1]).unwrap())),
        ),
        (
            "mul",
            vec![a.clone(), b.clone()],
            builder(|_, v| probe(v[0].mul(v[1]).unwrap())),
        ),
        (
            "scale",
            vec![a.clone()],
            builder(|_, v| probe(v[0].scale(-1.7).unwrap())),
        ),
        (
            "add_scalar",
            vec![a.clone()],
            builder(|_, v| probe(v[0].add_scalar(0.4).unwrap())),
        ),
        (
            "recip",
            vec![large],
            builder(|_, v| probe(v[0].recip().unwrap())),
        ),
        (
            "sqrt",
            vec![pos.clone()],
            builder(|_, v| probe(v[0].sqrt().unwrap())),
        ),
        (
            "exp",
            vec![a.clone()],
            builder(|_, v| probe(v[0].exp().unwrap())),
        ),
        (
            "tanh",
            vec![a.clone()],
            builder(|_, v| probe(v[0].tanh().unwrap())),
        ),
        (
            "leaky_relu",
            vec![a.clone()],
            builder(|_, v| probe(v[0].leaky_relu(0.2).unwrap())),
        ),
        (
            "sum",
            vec![a.clone()],
            builder(|_, v| v[0].sum().unwrap().scale(0.3).unwrap()),
        ),
        (
            "mean",
            vec![a.clone()],
            builder(|_, v| v[0].square().unwrap().mean().unwrap()),
        ),
        (
            "sq_norm",
            vec![a.clone()],
            builder(|_, v| v[0].sq_norm().unwrap()),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = gradient_check(&inputs, H, build.as_ref());
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn structural_primitives_match_finite_differences() {
    let mut r = rng(11);
    let x4 = uniform(&[2, 3, 2, 2], &mut r);
    let x2 = uniform(&[3, 5], &mut r);
    let c = uniform(&[3], &mut r);
    let n = uniform(&[2], &mut r);
    let cases: Vec<(&str, Vec<Tensor<f64>>, Box<Builder<'_>>)> = vec![
        (
            "sum_per_sample",
            vec![x4.clone()],
            builder(|_, v| probe(v[0].sum_per_sample().unwrap())),
        ),
        (
            "broadcast_per_sample",
            vec![n.clone()],
            builder(|_, v| probe(v[0].broadcast_per_sample(&[2, 3, 2]).unwrap())),
        ),
        (
            "sum_channel",
            vec![x4.clone()],
            builder(|_, v| probe(v[0].sum_channel().unwrap())),
        ),
        (
            "broadcast_channel",
            vec![c.clone()],
            builder(|_, v| probe(v[0].broadcast_channel(&[2, 3, 2, 2]).unwrap())),
        ),
        (
            "add_channel",
            vec![x4.clone(), c.clone()],
            builder(|_, v| probe(v[0].add_channel(v[1]).unwrap())),
        ),
        (
            "mul_channel",
            vec![x4.clone(), c.clone()],
            builder(|_, v| probe(v[0].mul_channel(v[1]).unwrap())),
        ),
        (
            "reshape",
            vec![x4.clone()],
            builder(|_, v| probe(v[0].reshape(&[4, 6]).unwrap())),
        ),
        (
            "slice_cols",
            vec![x2.clone()],
            builder(|_, v| probe(v[0].slice_cols(1, 3).unwrap())),
        ),
        (
            "pad_cols",
            vec![x2.clone()],
            builder(|_, v| probe(v[0].pad_cols(2, 8).unwrap())),
        ),
        (
            "broadcast_scalar",
            vec![Tensor::scalar(0.7)],
            builder(|_, v| probe(v[0].broadcast_scalar(&[2, 3]).unwrap())),
        ),
    ];
    for (name, inputs, build) in cases {
        let err = gradient_check(&inputs, H, build.as_ref());
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn matmul_all_transposes_match_finite_differences() {
    let mut r = rng(12);
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta {
            uniform(&[4, 3], &mut r)
        } else {
            uniform(&[3, 4], &mut r)
        };
        let b = if tb {
            uniform(&[5, 4], &mut r)
        } else {
            uniform(&[4, 5], &mut r)
        };
        let build = builder(move |_, v| probe(v[0].matmul_t(v[1], ta, tb).unwrap()));
        let err = gradient_check(&[a, b], H, build.as_ref());
        assert!(err < TOL, "matmul({ta},{tb}): {err:e}");
    }
}

#[test]
fn convolution_faces_match_finite_differences() {
    let mut r = rng(13);
    for &(stride, pad, kh) in &[(1, 1, 3), (2, 1, 4), (2, 0, 3)] {
        let geom = ConvGeom::new(stride, pad);
        let x = uniform(&[2, 2, 6, 6], &mut r);
        let k = uniform(&[3, 2, kh, kh], &mut r);
        let conv = builder(move |_, v| probe(v[0].conv2d(v[1], stride, pad).unwrap()));
        let err = gradient_check(&[x.clone(), k.clone()], H, conv.as_ref());
        assert!(err < TOL, "conv2d s{stride} p{pad}: {err:e}");

        let oh = geom.out_extent(6, kh).unwrap();
        let y = uniform(&[2, 3, oh, oh], &mut r);
        let convt = builder(move |_, v| probe(v[0].conv_transpose(v[1], geom, (6, 6)).unwrap()));
        let err = gradient_check(&[y.clone(), k.clone()], H, convt.as_ref());
        assert!(err < TOL, "conv_transpose s{stride} p{pad}: {err:e}");

        let convw =
            builder(move |_, v| probe(v[0].conv_kernel_grad(v[1], geom, (kh, kh)).unwrap()));
        let err = gradient_check(&[x, y], H, convw.as_ref());
        assert!(err < TOL, "conv_kernel_grad s{stride} p{pad}: {err:e}");
    }
    let x = uniform(&[1, 3, 4, 4], &mut r);
    let k = uniform(&[3, 2, 4, 4], &mut r);
    let deconv = builder(|_, v| probe(v[0].deconv2d(v[1], 2, 1).unwrap()));
    let err = gradient_check(&[x, k], H, deconv.as_ref());
    assert!(err < TOL, "deconv2d: {err:e}");
}

#[test]
fn batch_norm_training_mode_matches_finite_differences() {
    let mut r = rng(14);
    let x = uniform(&[4, 3, 2, 2], &mut r);
    let gamma = uniform(&[3], &mut r);
    let beta = uniform(&[3], &mut r);
    let build = builder(|_, v| {
        let (mut rm, mut rv) = (Tensor::zeros(&[3]), Tensor::full(&[3], 1.0));
        probe(
            batch_norm(
                v[0],
                v[1],
                v[2],
                (&mut rm, &mut rv),
                NormMode::Train { update: false },
            )
            .unwrap(),
        )
    });
    let err = gradient_check(&[x, gamma, beta], H, build.as_ref());
    assert!(err < TOL, "batch_norm: {err:e}");
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let mut r = rng(15);
    let x = uniform(&[4, 6], &mut r);
    let w1 = uniform(&[6, 8], &mut r);
    let b1 = uniform(&[8], &mut r);
    let w2 = uniform(&[8, 2], &mut r);
    let b2 = uniform(&[2], &mut r);
    let build = builder(|g, v| {
        let x = g.constant(x.clone());
        let h = x.dense(v[0], v[1]).unwrap().tanh().unwrap();
        h.dense(v[2], v[3])
            .unwrap()
            .square()
            .unwrap()
            .mean()
            .unwrap()
    });
    let err = gradient_check(&[w1, b1, w2, b2], H, build.as_ref());
    assert!(err < TOL, "{err:e}");
}

#[test]
fn penalty_of_linear_critic_has_closed_form_gradient() {
    // f(x) = a * sum(x) on R^D: grad_x f = a * 1, |grad| = |a| sqrt(D),
    // d/da (|grad| - 1)^2 = 2 (|a| sqrt(D) - 1) sqrt(D) sign(a).
    for &(a, d) in &[(0.3, 12usize), (-0.05, 7), (1.2, 3)] {
        let g = Graph::new();
        let av = g.leaf(Tensor::scalar(a));
        let x = g.leaf(Tensor::from_fn(&[d], |i| i as f64 * 0.1 - 0.2));
        let f = x.sum().unwrap().mul(av).unwrap();
        let gx = g.grad(f, &[x], true).unwrap()[0];
        let penalty = gx
            .sq_norm()
            .unwrap()
            .sqrt()
            .unwrap()
            .add_scalar(-1.0)
            .unwrap()
            .square()
            .unwrap();
        let da = g.grad(penalty, &[av], false).unwrap()[0].item().unwrap();
        let sd = (d as f64).sqrt();
        let expected = 2.0 * (a.abs() * sd - 1.0) * sd * a.signum();
        assert!(
            (da - expected).abs() < 1e-12 * (1.0 + expected.abs()),
            "{da} vs {expected}"
        );

        let pen = |a: f64| (a.abs() * sd - 1.0).powi(2);
        let fd = (pen(a + H) - pen(a - H)) / (2.0 * H);
        assert!((da - fd).abs() < 1e-6 * (1.0 + fd.abs()));
    }
}

#[test]
fn double_differentiation_through_conv_critic() {
    // Penalty (|grad_x D(x)| - 1)^2 of a conv + leaky-relu + dense critic,
    // differentiated with respect to the critic's parameters.
    let mut r = rng(16);
    let x = away_from_zero(&[2, 2, 5, 5], &mut r, 0.05);
    let k = uniform(&[3, 2, 3, 3], &mut r);
    let kb = uniform(&[3], &mut r);
    let w = uniform(&[27, 1], &mut r);
    let build = builder(|g, v| {
        let xv = g.leaf(x.clone());
        let h = xv.conv2d(v[0], 2, 1).unwrap().add_channel(v[1]).unwrap();
        let h = h
            .leaky_relu(0.2)
            .unwrap()
            .tanh()
            .unwrap()
            .flatten()
            .unwrap();
        let out = h.matmul(v[2]).unwrap().sum().unwrap();
        let gx = g.grad(out, &[xv], true).unwrap()[0];
        let norms = gx
            .square()
            .unwrap()
            .sum_per_sample()
            .unwrap()
            .sqrt()
            .unwrap();
        norms
            .add_scalar(-1.0)
            .unwrap()
            .square()
            .unwrap()
            .mean()
            .unwrap()
    });
    let err = gradient_check(&[k, kb, w], H, build.as_ref());
    assert!(err < 1e-4, "{err:e}");
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut r = rng(17);
        let g = Graph::<f32>::new();
        let x = g.constant(uniform(&[3, 2, 8, 8], &mut r).cast());
        let k = g.leaf(uniform(&[4, 2, 4, 4], &mut r).cast());
        let y = x
            .conv2d(k, 2, 1)
            .unwrap()
            .leaky_relu(0.2)
            .unwrap()
            .sq_norm()
            .unwrap();
        let grads = g.backward(y).unwrap();
        (y.item().unwrap().to_bits(), grads.get(&k).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(ga, gb);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_adjoint_identity_holds(seed in 0u64..10_000, stride in 1usize..3, pad in 0usize..2, kh in 1usize..4) {
        let mut r = rng(seed);
        let hw = 5;
        prop_assume!(hw + 2 * pad >= kh);
        let x = uniform(&[1, 2, hw, hw], &mut r);
        let k = uniform(&[3, 2, kh, kh], &mut r);
        let g = Graph::new();
        let kv = g.constant(k);
        let cx = g.constant(x.clone()).conv2d(kv, stride, pad).unwrap();
        let y = uniform(&cx.shape(), &mut r);
        let ty = g.constant(y.clone()).conv_transpose(kv, ConvGeom::new(stride, pad), (hw, hw)).unwrap();
        let lhs = cx.value().dot(&y).unwrap();
        let rhs = x.dot(&ty.value()).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
