//! The runnable finite-difference verification suite: every differentiable
//! op and composite block by name, each checked on several seeds at f64.
//! The CLI's gradcheck command and the acceptance tests both drive this.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcheck::{grad_check, grad_check_module, probe, GradCheckOutcome, GradCheckSettings};
use crate::graph::Mode;
use crate::model::branches::{ResidualBlock, ResidualBlockCfg, SpatialBlock};
use crate::model::ict::{IctBlock, IctBlockCfg, Irffn, Lpu, PatchEmbed};
use crate::model::layers::InitCtx;
use crate::model::{fusion, Model, ModelConfig};
use crate::ops::activation::Activation;
use crate::ops::attention::AttnGeom;
use crate::ops::conv::ConvCfg;
use crate::ops::pool::{PoolCfg, PoolMode};
use crate::params::ParamStore;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub worst_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Tensor/index detail for the worst element when the case failed.
    pub detail: Option<String>,
}

/// Single-op case names (checked at the base tolerance).
pub const SINGLE_OPS: &[&str] = &[
    "conv2d",
    "depthwise_conv2d",
    "pool2d_max",
    "pool2d_avg",
    "global_avg_pool",
    "adaptive_avg_pool",
    "batch_norm",
    "layer_norm",
    "relu",
    "gelu",
    "sigmoid",
    "softmax",
    "matmul",
    "concat_slice",
    "gates_and_reductions",
    "dropout",
    "attention",
    "attention_windowed",
    "cross_entropy",
];

/// Composite block case names (checked at 10× the base tolerance).
pub const COMPOSITES: &[&str] = &[
    "lpu",
    "patch_embed",
    "irffn",
    "ict_block",
    "stem",
    "residual_block",
    "spatial_block",
    "cfa",
    "spatial_attention",
    "micro_model",
];

pub fn all_case_names() -> Vec<&'static str> {
    SINGLE_OPS.iter().chain(COMPOSITES.iter()).copied().collect()
}

fn rand_tensor(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn settings(seed: u64, tol: f64, cap: Option<usize>) -> GradCheckSettings {
    GradCheckSettings {
        tol,
        step: 1e-5,
        max_elements: cap,
        seed,
        mode: Mode::Train,
    }
}

fn run_case(name: &str, seed: u64, tol: f64) -> Result<GradCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    match name {
        "conv2d" => {
            let x = rand_tensor(Shape::nchw(2, 3, 6, 6), &mut rng);
            let w = rand_tensor(Shape::nchw(4, 3, 3, 3), &mut rng);
            let b = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
            let r = probe(Shape::nchw(2, 4, 3, 3), seed);
            let cfg = ConvCfg::new(2, 1);
            grad_check(
                &[("x".into(), x), ("w".into(), w), ("b".into(), b)],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.conv2d(l[0], l[1], Some(l[2]), cfg)?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "depthwise_conv2d" => {
            let x = rand_tensor(Shape::nchw(1, 6, 6, 6), &mut rng);
            let w = rand_tensor(Shape::nchw(6, 1, 3, 3), &mut rng);
            let r = probe(Shape::nchw(1, 6, 3, 3), seed);
            let cfg = ConvCfg::grouped(2, 1, 6);
            grad_check(
                &[("x".into(), x), ("w".into(), w)],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.conv2d(l[0], l[1], None, cfg)?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "pool2d_max" | "pool2d_avg" => {
            let mode = if name.ends_with("max") { PoolMode::Max } else { PoolMode::Avg };
            let x = rand_tensor(Shape::nchw(1, 2, 6, 6), &mut rng);
            let cfg = PoolCfg::with_pad(3, 2, 1, mode);
            let r = probe(Shape::nchw(1, 2, 3, 3), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.pool2d(l[0], cfg)?;
                g.dot_const(y, r.clone())
            })
        }
        "global_avg_pool" => {
            let x = rand_tensor(Shape::nchw(2, 3, 5, 5), &mut rng);
            let r = probe(Shape::nchw(2, 3, 1, 1), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.global_avg_pool(l[0]);
                g.dot_const(y, r.clone())
            })
        }
        "adaptive_avg_pool" => {
            let x = rand_tensor(Shape::nchw(1, 3, 7, 7), &mut rng);
            let r = probe(Shape::nchw(1, 3, 3, 3), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.adaptive_avg_pool(l[0], 3, 3)?;
                g.dot_const(y, r.clone())
            })
        }
        "batch_norm" => {
            let x = rand_tensor(Shape::nchw(3, 4, 4, 4), &mut rng);
            let gamma = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
            let beta = rand_tensor(Shape::nchw(1, 4, 1, 1), &mut rng);
            let r = probe(Shape::nchw(3, 4, 4, 4), seed);
            let mut ps = ParamStore::<f64>::new();
            let rm = ps.register("rm", Tensor::zeros(Shape::nchw(1, 4, 1, 1)), false)?;
            let rv = ps.register("rv", Tensor::filled(Shape::nchw(1, 4, 1, 1), 1.0), false)?;
            grad_check(
                &[("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.batch_norm(l[0], l[1], l[2], rm, rv, &ps, 1e-5, 0.1)?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "layer_norm" => {
            let x = rand_tensor(Shape::nchw(2, 5, 3, 3), &mut rng);
            let gamma = rand_tensor(Shape::nchw(1, 5, 1, 1), &mut rng);
            let beta = rand_tensor(Shape::nchw(1, 5, 1, 1), &mut rng);
            let r = probe(Shape::nchw(2, 5, 3, 3), seed);
            grad_check(
                &[("x".into(), x), ("gamma".into(), gamma), ("beta".into(), beta)],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.layer_norm(l[0], l[1], l[2], 1e-5)?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "relu" | "gelu" | "sigmoid" => {
            let kind = match name {
                "relu" => Activation::Relu,
                "gelu" => Activation::Gelu,
                _ => Activation::Sigmoid,
            };
            let x = rand_tensor(Shape::nchw(2, 4, 4, 4), &mut rng);
            let r = probe(Shape::nchw(2, 4, 4, 4), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.activation(l[0], kind);
                g.dot_const(y, r.clone())
            })
        }
        "softmax" => {
            let x = rand_tensor(Shape::nchw(2, 5, 2, 2), &mut rng);
            let r = probe(Shape::nchw(2, 5, 2, 2), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.softmax(l[0], 1)?;
                g.dot_const(y, r.clone())
            })
        }
        "matmul" => {
            let a = rand_tensor(Shape::matrix(5, 4), &mut rng);
            let b = rand_tensor(Shape::matrix(4, 6), &mut rng);
            let r = probe(Shape::matrix(5, 6), seed);
            grad_check(
                &[("a".into(), a), ("b".into(), b)],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.matmul(l[0], l[1])?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "concat_slice" => {
            let a = rand_tensor(Shape::nchw(1, 2, 4, 4), &mut rng);
            let b = rand_tensor(Shape::nchw(1, 3, 4, 4), &mut rng);
            let r = probe(Shape::nchw(1, 4, 4, 4), seed);
            grad_check(
                &[("a".into(), a), ("b".into(), b)],
                &settings(seed, tol, None),
                move |g, l| {
                    let cat = g.concat_channels(&[l[0], l[1]])?;
                    let sl = g.slice_channels(cat, 1, 5)?;
                    g.dot_const(sl, r.clone())
                },
            )
        }
        "gates_and_reductions" => {
            let x = rand_tensor(Shape::nchw(2, 3, 4, 4), &mut rng);
            let gc = rand_tensor(Shape::nchw(2, 3, 1, 1), &mut rng);
            let gp = rand_tensor(Shape::nchw(2, 1, 4, 4), &mut rng);
            let r = probe(Shape::nchw(2, 1, 4, 4), seed);
            grad_check(
                &[("x".into(), x), ("gc".into(), gc), ("gp".into(), gp)],
                &settings(seed, tol, None),
                move |g, l| {
                    let a = g.mul_channel_gate(l[0], l[1])?;
                    let b = g.mul_pixel_gate(a, l[2])?;
                    let m = g.channel_mean(b);
                    let x2 = g.channel_max(b);
                    let s1 = g.dot_const(m, r.clone())?;
                    let s2 = g.dot_const(x2, r.clone())?;
                    g.add(s1, s2)
                },
            )
        }
        "dropout" => {
            let x = rand_tensor(Shape::nchw(2, 4, 3, 3), &mut rng);
            let r = probe(Shape::nchw(2, 4, 3, 3), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let y = g.dropout(l[0], 0.3);
                g.dot_const(y, r.clone())
            })
        }
        "attention" | "attention_windowed" => {
            let window = if name.ends_with("windowed") { Some(4) } else { None };
            let q = rand_tensor(Shape::nchw(1, 8, 4, 4), &mut rng);
            let k = rand_tensor(Shape::nchw(1, 8, 2, 2), &mut rng);
            let v = rand_tensor(Shape::nchw(1, 8, 2, 2), &mut rng);
            let geom = AttnGeom::infer(&q, &k, 2, 2, window)?;
            let bias = rand_tensor(geom.bias_shape(), &mut rng);
            let r = probe(Shape::nchw(1, 8, 4, 4), seed);
            grad_check(
                &[
                    ("q".into(), q),
                    ("k".into(), k),
                    ("v".into(), v),
                    ("bias".into(), bias),
                ],
                &settings(seed, tol, None),
                move |g, l| {
                    let y = g.attention(l[0], l[1], l[2], l[3], geom)?;
                    g.dot_const(y, r.clone())
                },
            )
        }
        "cross_entropy" => {
            let logits = rand_tensor(Shape::nchw(4, 5, 1, 1), &mut rng);
            let labels = vec![0usize, 3, 2, 4];
            let weights = vec![1.2, 0.8, 1.0, 1.5, 0.5];
            grad_check(
                &[("logits".into(), logits)],
                &settings(seed, tol, None),
                move |g, l| g.cross_entropy(l[0], &labels, Some(&weights)),
            )
        }
        "lpu" => {
            let (ps, lpu, x, r) = {
                let mut ps = ParamStore::<f64>::new();
                let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
                let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
                let lpu = Lpu::init(&mut ctx, "lpu", 4)?;
                let x = rand_tensor(Shape::nchw(1, 4, 5, 5), &mut rng);
                let r = probe(Shape::nchw(1, 4, 5, 5), seed);
                (ps, lpu, x, r)
            };
            grad_check_module(&ps, x, &settings(seed, tol, None), |g, xv| {
                let y = lpu.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "patch_embed" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let pe = PatchEmbed::init(&mut ctx, "pe", 3, 6, 2)?;
            let x = rand_tensor(Shape::nchw(1, 3, 8, 8), &mut rng);
            let r = probe(Shape::nchw(1, 6, 4, 4), seed);
            grad_check_module(&ps, x, &settings(seed, tol, None), |g, xv| {
                let y = pe.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "irffn" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let ffn = Irffn::init(&mut ctx, "ffn", 8, 2)?;
            let x = rand_tensor(Shape::nchw(1, 8, 4, 4), &mut rng);
            let r = probe(Shape::nchw(1, 8, 4, 4), seed);
            grad_check_module(&ps, x, &settings(seed, tol, None), |g, xv| {
                let y = ffn.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "ict_block" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let block = IctBlock::init(
                &mut ctx,
                "block",
                &IctBlockCfg {
                    dim: 8,
                    heads: 2,
                    max_grid: (8, 8),
                    irffn_ratio: 2,
                    attn_window: None,
                    eq10_literal: false,
                },
            )?;
            let x = rand_tensor(Shape::nchw(1, 8, 8, 8), &mut rng);
            let r = probe(Shape::nchw(1, 8, 8, 8), seed);
            grad_check_module(&ps, x, &settings(seed, tol, Some(4)), |g, xv| {
                let y = block.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "stem" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let stem = crate::model::backbone::Stem::init(&mut ctx, "stem", 8)?;
            let x = rand_tensor(Shape::nchw(2, 3, 8, 8), &mut rng);
            let r = probe(Shape::nchw(2, 8, 4, 4), seed);
            grad_check_module(&ps, x, &settings(seed, tol, Some(6)), |g, xv| {
                let y = stem.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "residual_block" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let block = ResidualBlock::init(
                &mut ctx,
                "rb",
                &ResidualBlockCfg {
                    c_in: 8,
                    c_out: 8,
                    stride: 2,
                    pointwise: true,
                },
            )?;
            let x = rand_tensor(Shape::nchw(1, 8, 6, 6), &mut rng);
            let r = probe(Shape::nchw(1, 8, 3, 3), seed);
            grad_check_module(&ps, x, &settings(seed, tol, Some(8)), |g, xv| {
                let y = block.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "spatial_block" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let block = SpatialBlock::init(&mut ctx, "sb", 3, 6, PoolMode::Max)?;
            let x = rand_tensor(Shape::nchw(2, 3, 6, 6), &mut rng);
            let r = probe(Shape::nchw(2, 6, 3, 3), seed);
            grad_check_module(&ps, x, &settings(seed, tol, Some(8)), |g, xv| {
                let y = block.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "cfa" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let cfa = fusion::Cfa::init(&mut ctx, "cfa", 6)?;
            let x = rand_tensor(Shape::nchw(2, 6, 3, 3), &mut rng);
            let r = probe(Shape::nchw(2, 6, 3, 3), seed);
            grad_check_module(&ps, x, &settings(seed, tol, Some(8)), |g, xv| {
                let y = cfa.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "spatial_attention" => {
            let mut ps = ParamStore::<f64>::new();
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            let mut ctx = InitCtx::new(&mut ps, &mut init_rng);
            let sa = fusion::SpatialAttention::init(&mut ctx, "sa")?;
            let x = rand_tensor(Shape::nchw(1, 4, 6, 6), &mut rng);
            let r = probe(Shape::nchw(1, 4, 6, 6), seed);
            grad_check_module(&ps, x, &settings(seed, tol, None), |g, xv| {
                let y = sa.forward(g, &ps, xv)?;
                g.dot_const(y, r.clone())
            })
        }
        "micro_model" => {
            let cfg = ModelConfig::scaled(8, 32);
            let mut ps = ParamStore::<f64>::new();
            let model = Model::build(&cfg, &mut ps, seed)?;
            let x = rand_tensor(Shape::nchw(1, 3, 32, 32), &mut rng).map(|v| v * 0.5);
            let labels = vec![(seed % 5) as usize];
            let mut s = settings(seed, tol, Some(2));
            s.mode = Mode::Eval;
            grad_check_module(&ps, x, &s, |g, xv| {
                let out = model.forward(g, &ps, xv)?;
                g.cross_entropy(out.logits, &labels, None)
            })
        }
        "negative_control" => {
            // self-test of the checker: route most of the output through a
            // detached copy so the analytic gradient comes out 3x too small;
            // this case must FAIL
            let x = rand_tensor(Shape::matrix(3, 3), &mut rng);
            let r = probe(Shape::matrix(3, 3), seed);
            grad_check(&[("x".into(), x)], &settings(seed, tol, None), move |g, l| {
                let doubled = g.scale(l[0], 2.0);
                let detached = g.value(doubled).clone();
                let fake = g.leaf(detached, false);
                let both = g.add(fake, l[0])?;
                let y = g.scale(both, 0.5);
                g.dot_const(y, r.clone())
            })
        }
        other => Err(Error::Config(format!("unknown gradcheck scope {other}"))),
    }
}

/// Run the named case (or every case for "all") on the given seeds at base
/// tolerance `tol` (composites get 10×). Results carry the worst relative
/// error seen across seeds.
pub fn run_gradcheck_suite(scope: &str, tol: f64, seeds: &[u64]) -> Result<Vec<CaseResult>> {
    let names: Vec<&str> = if scope == "all" {
        all_case_names()
    } else {
        let known = all_case_names();
        if !known.contains(&scope) && scope != "negative_control" {
            return Err(Error::Config(format!(
                "unknown gradcheck scope {scope}; known: all, negative_control, {}",
                known.join(", ")
            )));
        }
        vec![scope]
    };
    let mut results = Vec::with_capacity(names.len());
    for name in names {
        let case_tol = if COMPOSITES.contains(&name) || name == "micro_model" {
            tol * 10.0
        } else {
            tol
        };
        let mut worst = 0.0f64;
        let mut detail = None;
        for &seed in seeds {
            let outcome = run_case(name, seed, case_tol)?;
            if outcome.max_rel_err > worst {
                worst = outcome.max_rel_err;
                detail = outcome.failure().map(|t| {
                    format!(
                        "{} index {} analytic {:.3e} numeric {:.3e}",
                        t.name, t.worst_index, t.analytic_at_worst, t.numeric_at_worst
                    )
                });
            }
        }
        results.push(CaseResult {
            name: name.to_string(),
            worst_rel_err: worst,
            tol: case_tol,
            passed: worst <= case_tol,
            detail,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_control_fails_as_designed() {
        let results = run_gradcheck_suite("negative_control", 1e-4, &[1]).unwrap();
        assert!(!results[0].passed, "the corrupted case must be caught");
    }

    #[test]
    fn single_scope_runs_single_case() {
        let results = run_gradcheck_suite("matmul", 1e-4, &[1, 2]).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].name, "matmul");
        assert!(results[0].passed);
    }
}
