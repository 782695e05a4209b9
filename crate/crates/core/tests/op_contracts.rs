//! Per-op contracts: oracle equivalence on random inputs and
//! finite-difference gradient checks (f64, 3 seeds each).

use hsict_core::gradcheck::{grad_check, probe, GradCheckSettings};
use hsict_core::graph::{Graph, Mode};
use hsict_core::ops::activation::Activation;
use hsict_core::ops::attention::AttnGeom;
use hsict_core::ops::conv::{conv2d, ConvCfg};
use hsict_core::ops::pool::{pool2d, PoolCfg, PoolMode};
use hsict_core::oracle;
use hsict_core::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn settings(seed: u64, tol: f64) -> GradCheckSettings {
    GradCheckSettings {
        tol,
        seed,
        ..Default::default()
    }
}

const SEEDS: [u64; 3] = [11, 23, 47];

#[test]
fn conv2d_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(Shape::nchw(2, 3, 8, 8), &mut rng);
    let w = rand_tensor(Shape::nchw(4, 3, 3, 3), &mut rng);
    let y = conv2d(&x, &w, None, &ConvCfg::new(1, 0)).unwrap();
    let want = oracle::naive_conv2d(&x, &w, None, 1, 0, 0, 1);
    for (a, b) in y.data().iter().zip(want.data().iter()) {
        assert!((a - b).abs() / b.abs().max(1.0) <= 1e-6);
    }
}

#[test]
fn conv2d_grad_check() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(2, 3, 6, 6), &mut rng);
        let w = rand_tensor(Shape::nchw(4, 3, 3, 3), &mut rng);
        let b = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
        let r = probe(Shape::nchw(2, 4, 3, 3), seed);
        let cfg = ConvCfg::new(2, 1);
        let outcome = grad_check(
            &[("x".into(), x), ("w".into(), w), ("b".into(), b)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.conv2d(leaves[0], leaves[1], Some(leaves[2]), cfg)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn depthwise_conv2d_grad_check() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(1, 6, 5, 5), &mut rng);
        let w = rand_tensor(Shape::nchw(6, 1, 3, 3), &mut rng);
        let r = probe(Shape::nchw(1, 6, 5, 5), seed);
        let cfg = ConvCfg::grouped(1, 1, 6);
        let outcome = grad_check(
            &[("x".into(), x), ("w".into(), w)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.conv2d(leaves[0], leaves[1], None, cfg)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn pool2d_matches_oracle_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(Shape::nchw(1, 2, 6, 6), &mut rng);
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let cfg = PoolCfg::new(3, 2, mode);
        let (y, _) = pool2d(&x, &cfg).unwrap();
        let want = oracle::naive_pool2d(&x, 3, 2, 0, mode);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data().iter()) {
            assert_eq!(a, b, "mode {mode:?}");
        }
    }
}

#[test]
fn pool2d_grad_check() {
    for &seed in &SEEDS {
        for (mode, tol) in [(PoolMode::Avg, 1e-4), (PoolMode::Max, 1e-4)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(Shape::nchw(1, 2, 6, 6), &mut rng);
            let cfg = PoolCfg::with_pad(3, 2, 1, mode);
            let r = probe(Shape::nchw(1, 2, 3, 3), seed);
            let outcome = grad_check(
                &[("x".into(), x)],
                &settings(seed, tol),
                move |g, leaves| {
                    let y = g.pool2d(leaves[0], cfg)?;
                    g.dot_const(y, r.clone())
                },
            )
            .unwrap();
            assert!(outcome.passed(), "{mode:?} seed {seed}: {:?}", outcome.failure());
        }
    }
}

#[test]
fn gap_and_adaptive_pool_grad_check() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(2, 3, 6, 6), &mut rng);
        let r1 = probe(Shape::nchw(2, 3, 1, 1), seed);
        let r2 = probe(Shape::nchw(2, 3, 3, 3), seed + 1);
        let outcome = grad_check(
            &[("x".into(), x)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let a = g.global_avg_pool(leaves[0]);
                let b = g.adaptive_avg_pool(leaves[0], 3, 3)?;
                let sa = g.dot_const(a, r1.clone())?;
                let sb = g.dot_const(b, r2.clone())?;
                g.add(sa, sb)
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn norm_grad_checks() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(3, 4, 5, 5), &mut rng);
        let gamma = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
        let beta = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
        let r = probe(Shape::nchw(3, 4, 5, 5), seed);

        // batch norm, training statistics
        let (bx, bg, bb, br) = (x.clone(), gamma.clone(), beta.clone(), r.clone());
        let mut store = hsict_core::ParamStore::<f64>::new();
        let rm = store
            .register("rm", Tensor::zeros(Shape::nchw(1, 4, 1, 1)), false)
            .unwrap();
        let rv = store
            .register("rv", Tensor::filled(Shape::nchw(1, 4, 1, 1), 1.0), false)
            .unwrap();
        let outcome = grad_check(
            &[("x".into(), bx), ("gamma".into(), bg), ("beta".into(), bb)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.batch_norm(leaves[0], leaves[1], leaves[2], rm, rv, &store, 1e-5, 0.1)?;
                g.dot_const(y, br.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "bn seed {seed}: {:?}", outcome.failure());

        // layer norm
        let outcome = grad_check(
            &[("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.layer_norm(leaves[0], leaves[1], leaves[2], 1e-5)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "ln seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn activation_and_softmax_grad_checks() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(2, 5, 3, 3), &mut rng);
        let r = probe(Shape::nchw(2, 5, 3, 3), seed);
        for kind in [Activation::Relu, Activation::Gelu, Activation::Sigmoid] {
            let (xx, rr) = (x.clone(), r.clone());
            let outcome = grad_check(
                &[("x".into(), xx)],
                &settings(seed, 1e-4),
                move |g, leaves| {
                    let y = g.activation(leaves[0], kind);
                    g.dot_const(y, rr.clone())
                },
            )
            .unwrap();
            assert!(outcome.passed(), "{kind:?} seed {seed}: {:?}", outcome.failure());
        }
        for axis in [1usize, 3] {
            let (xx, rr) = (x.clone(), r.clone());
            let outcome = grad_check(
                &[("x".into(), xx)],
                &settings(seed, 1e-4),
                move |g, leaves| {
                    let y = g.softmax(leaves[0], axis)?;
                    g.dot_const(y, rr.clone())
                },
            )
            .unwrap();
            assert!(outcome.passed(), "softmax axis {axis} seed {seed}: {:?}", outcome.failure());
        }
    }
}

#[test]
fn structural_ops_grad_check() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_tensor(Shape::nchw(2, 2, 4, 4), &mut rng);
        let b = rand_tensor(Shape::nchw(2, 3, 4, 4), &mut rng);
        let gate_c = rand_tensor(Shape::nchw(2, 5, 1, 1), &mut rng);
        let gate_p = rand_tensor(Shape::nchw(2, 1, 4, 4), &mut rng);
        let r = probe(Shape::nchw(2, 5, 4, 4), seed);
        let r2 = probe(Shape::nchw(2, 2, 4, 4), seed + 9);
        let r3 = probe(Shape::nchw(2, 1, 4, 4), seed + 10);
        let outcome = grad_check(
            &[
                ("a".into(), a),
                ("b".into(), b),
                ("gate_c".into(), gate_c),
                ("gate_p".into(), gate_p),
            ],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let cat = g.concat_channels(&[leaves[0], leaves[1]])?;
                let gated = g.mul_channel_gate(cat, leaves[2])?;
                let gated = g.mul_pixel_gate(gated, leaves[3])?;
                let sl = g.slice_channels(gated, 0, 2)?;
                let cm = g.channel_mean(gated);
                let cx = g.channel_max(gated);
                let s1 = g.dot_const(gated, r.clone())?;
                let s2 = g.dot_const(sl, r2.clone())?;
                let s3 = g.dot_const(cm, r3.clone())?;
                let s4 = g.dot_const(cx, r3.clone())?;
                let t1 = g.add(s1, s2)?;
                let t2 = g.add(s3, s4)?;
                g.add(t1, t2)
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn matmul_grad_check_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(Shape::matrix(7, 5), &mut rng);
    let b = rand_tensor(Shape::matrix(5, 3), &mut rng);
    let y = hsict_core::ops::matmul(&a, &b).unwrap();
    let want = oracle::naive_matmul(&a, &b);
    for (p, q) in y.data().iter().zip(want.data().iter()) {
        assert!((p - q).abs() / q.abs().max(1.0) <= 1e-6);
    }
    for &seed in &SEEDS {
        let (aa, bb) = (a.clone(), b.clone());
        let r = probe(Shape::matrix(7, 3), seed);
        let outcome = grad_check(
            &[("a".into(), aa), ("b".into(), bb)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.matmul(leaves[0], leaves[1])?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn dropout_grad_check_fixed_mask() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(Shape::nchw(2, 4, 3, 3), &mut rng);
        let r = probe(Shape::nchw(2, 4, 3, 3), seed);
        let outcome = grad_check(
            &[("x".into(), x)],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.dropout(leaves[0], 0.3);
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn attention_matches_naive_and_grad_checks() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rand_tensor(Shape::nchw(1, 8, 4, 4), &mut rng);
        let k = rand_tensor(Shape::nchw(1, 8, 2, 2), &mut rng);
        let v = rand_tensor(Shape::nchw(1, 8, 2, 2), &mut rng);
        let geom = AttnGeom::infer(&q, &k, 2, 2, None).unwrap();
        let bias = rand_tensor(geom.bias_shape(), &mut rng);

        let (out, _) =
            hsict_core::ops::attention::attention_core(&q, &k, &v, &bias, &geom).unwrap();
        let (want, _) = oracle::naive_attention(&q, &k, &v, &bias, &geom);
        for (a, b) in out.data().iter().zip(want.data().iter()) {
            assert!((a - b).abs() <= 1e-10, "attention mismatch {a} vs {b}");
        }

        let r = probe(Shape::nchw(1, 8, 4, 4), seed);
        let outcome = grad_check(
            &[
                ("q".into(), q),
                ("k".into(), k),
                ("v".into(), v),
                ("bias".into(), bias),
            ],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.attention(leaves[0], leaves[1], leaves[2], leaves[3], geom)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn windowed_attention_grad_checks() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rand_tensor(Shape::nchw(1, 4, 6, 6), &mut rng);
        let k = rand_tensor(Shape::nchw(1, 4, 3, 3), &mut rng);
        let v = rand_tensor(Shape::nchw(1, 4, 3, 3), &mut rng);
        let geom = AttnGeom::infer(&q, &k, 2, 2, Some(4)).unwrap();
        let bias = rand_tensor(geom.bias_shape(), &mut rng);
        let r = probe(Shape::nchw(1, 4, 6, 6), seed);
        let outcome = grad_check(
            &[
                ("q".into(), q),
                ("k".into(), k),
                ("v".into(), v),
                ("bias".into(), bias),
            ],
            &settings(seed, 1e-4),
            move |g, leaves| {
                let y = g.attention(leaves[0], leaves[1], leaves[2], leaves[3], geom)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn cross_entropy_matches_finite_differences() {
    for &seed in &SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = rand_tensor(Shape::nchw(4, 5, 1, 1), &mut rng);
        let labels = vec![0usize, 3, 2, 4];
        let weights = vec![1.2, 0.8, 1.0, 1.5, 0.5];
        let outcome = grad_check(
            &[("logits".into(), logits)],
            &settings(seed, 1e-6),
            move |g, leaves| g.cross_entropy(leaves[0], &labels, Some(&weights)),
        )
        .unwrap();
        assert!(outcome.passed(), "seed {seed}: {:?}", outcome.failure());
    }
}

#[test]
fn cross_entropy_known_values() {
    // perfect prediction -> ~0 loss; uniform probs over 5 classes -> ln 5
    let mut g = Graph::<f64>::new(Mode::Train, false, 0);
    let strong = g.leaf(
        Tensor::from_vec(
            Shape::nchw(1, 5, 1, 1),
            vec![60.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap(),
        false,
    );
    let l = g.cross_entropy(strong, &[0], None).unwrap();
    assert!(g.value(l).data()[0].abs() < 1e-9);

    let uniform = g.leaf(Tensor::zeros(Shape::nchw(1, 5, 1, 1)), false);
    let l = g.cross_entropy(uniform, &[2], None).unwrap();
    assert!((g.value(l).data()[0] - 5.0f64.ln()).abs() < 1e-12);
}

#[test]
fn attention_qk_flops_reduced_vs_full() {
    // same tensors, reduced K/V vs full-resolution K/V: the reduced route
    // must execute ~1/4 the multiply-adds
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = rand_tensor(Shape::nchw(1, 8, 8, 8), &mut rng);
    let k_red = rand_tensor(Shape::nchw(1, 8, 4, 4), &mut rng);
    let v_red = k_red.clone();
    let geom_red = AttnGeom::infer(&q, &k_red, 2, 2, None).unwrap();
    let bias_red = Tensor::zeros(geom_red.bias_shape());
    let (_, saved_red) =
        hsict_core::ops::attention::attention_core(&q, &k_red, &v_red, &bias_red, &geom_red)
            .unwrap();

    let geom_full = AttnGeom::infer(&q, &q, 2, 1, None).unwrap();
    let bias_full = Tensor::zeros(geom_full.bias_shape());
    let (_, saved_full) =
        hsict_core::ops::attention::attention_core(&q, &q, &q, &bias_full, &geom_full).unwrap();

    let ratio = saved_red.qk_macs as f64 / saved_full.qk_macs as f64;
    assert!(ratio <= 0.3, "ratio {ratio}");
}
