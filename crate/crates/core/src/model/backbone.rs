//! Staged backbone: stem CNN, transformer stages, and the homogeneous/
//! structural pooling fusion that closes each stage.

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::model::config::{BackboneConfig, HsFuseConfig, StageConfig};
use crate::model::ict::{IctBlock, IctBlockCfg, PatchEmbed};
use crate::model::layers::{BatchNorm2d, Conv2dLayer, InitCtx};
use crate::ops::conv::ConvCfg;
use crate::ops::pool::{PoolCfg, PoolMode};
use crate::params::ParamStore;
use crate::scalar::{lit, Scalar};

/// Three 3×3 convolutions (first at stride 2) with batch norm + ReLU,
/// taking the RGB input to the stem width at half resolution.
pub struct Stem {
    convs: Vec<(Conv2dLayer, BatchNorm2d)>,
}

impl Stem {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, dim: usize) -> Result<Self> {
        let mut convs = Vec::with_capacity(3);
        for i in 0..3 {
            let (c_in, stride) = if i == 0 { (3, 2) } else { (dim, 1) };
            convs.push((
                Conv2dLayer::init(
                    ctx,
                    &format!("{name}.conv{i}"),
                    c_in,
                    dim,
                    3,
                    ConvCfg::new(stride, 1),
                    true,
                )?,
                BatchNorm2d::init(ctx, &format!("{name}.bn{i}"), dim)?,
            ));
        }
        Ok(Stem { convs })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let shape = g.value(x).shape();
        if shape.c() != 3 {
            return Err(Error::dim("input channels", 3, shape.c()));
        }
        if shape.h() < 8 || shape.w() < 8 {
            return Err(Error::Config(format!(
                "stem input {}x{} too small, need at least 8x8",
                shape.h(),
                shape.w()
            )));
        }
        let mut cur = x;
        for (conv, bn) in &self.convs {
            cur = conv.forward(g, ps, cur)?;
            cur = bn.forward(g, ps, cur)?;
            cur = g.relu(cur);
        }
        Ok(cur)
    }
}

/// Weighted fusion of the average (homogeneous) and max (structural)
/// pooling branches: gamma1 · avg + gamma2 · max, both over the same window.
pub fn hs_fuse<T: Scalar>(
    g: &mut Graph<T>,
    x: Value,
    hs: &HsFuseConfig,
    downsample: bool,
) -> Result<Value> {
    let (window, stride, pad) = if downsample {
        (hs.window, hs.stride, 0)
    } else {
        (3, 1, 1)
    };
    let avg = g.pool2d(x, PoolCfg::with_pad(window, stride, pad, PoolMode::Avg))?;
    let max = g.pool2d(x, PoolCfg::with_pad(window, stride, pad, PoolMode::Max))?;
    let h = g.scale(avg, lit::<T>(hs.gamma1));
    let s = g.scale(max, lit::<T>(hs.gamma2));
    g.add(h, s)
}

/// One backbone stage: patch embedding, `blocks` transformer blocks, a 3×3
/// conv + ReLU, then the closing fusion (shape-preserving or downsampling).
pub struct Stage {
    pub embed: PatchEmbed,
    pub blocks: Vec<IctBlock>,
    pub conv: Conv2dLayer,
    pub cfg: StageConfig,
    pub hs: HsFuseConfig,
}

pub struct StageInit {
    pub c_in: usize,
    pub grid: (usize, usize),
    pub irffn_ratio: usize,
    pub attn_window: Option<usize>,
    pub eq10_literal: bool,
}

impl Stage {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        cfg: &StageConfig,
        hs: &HsFuseConfig,
        si: &StageInit,
    ) -> Result<Self> {
        let embed = PatchEmbed::init(ctx, &format!("{name}.embed"), si.c_in, cfg.dim, cfg.embed_stride)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for b in 0..cfg.blocks {
            blocks.push(IctBlock::init(
                ctx,
                &format!("{name}.block{b}"),
                &IctBlockCfg {
                    dim: cfg.dim,
                    heads: cfg.heads,
                    max_grid: si.grid,
                    irffn_ratio: si.irffn_ratio,
                    attn_window: si.attn_window,
                    eq10_literal: si.eq10_literal,
                },
            )?);
        }
        let conv = Conv2dLayer::init(
            ctx,
            &format!("{name}.conv"),
            cfg.dim,
            cfg.dim,
            3,
            ConvCfg::new(1, 1),
            true,
        )?;
        Ok(Stage {
            embed,
            blocks,
            conv,
            cfg: *cfg,
            hs: *hs,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let mut cur = self.embed.forward(g, ps, x)?;
        for block in &self.blocks {
            cur = block.forward(g, ps, cur)?;
        }
        cur = self.conv.forward(g, ps, cur)?;
        cur = g.relu(cur);
        hs_fuse(g, cur, &self.hs, self.cfg.fuse_downsample)
    }
}

pub struct Backbone {
    pub stem: Stem,
    pub stages: Vec<Stage>,
}

impl Backbone {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        cfg: &BackboneConfig,
        grids: &[(usize, usize)],
        irffn_ratio: usize,
        attn_window: Option<usize>,
        eq10_literal: bool,
    ) -> Result<Self> {
        let stem = Stem::init(ctx, &format!("{name}.stem"), cfg.stem_dim)?;
        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut c_in = cfg.stem_dim;
        for (i, (sc, grid)) in cfg.stages.iter().zip(grids.iter()).enumerate() {
            stages.push(Stage::init(
                ctx,
                &format!("{name}.stage{i}"),
                sc,
                &cfg.hs,
                &StageInit {
                    c_in,
                    grid: *grid,
                    irffn_ratio,
                    attn_window,
                    eq10_literal,
                },
            )?);
            c_in = sc.dim;
        }
        Ok(Backbone { stem, stages })
    }

    /// Returns the final stage map and every intermediate stage output.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<(Value, Vec<Value>)> {
        let mut cur = self.stem.forward(g, ps, x)?;
        let mut stage_outputs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            cur = stage.forward(g, ps, cur)?;
            stage_outputs.push(cur);
        }
        Ok((cur, stage_outputs))
    }
}
