//! Auxiliary CNN feature extractors running in parallel with the backbone:
//! a four-block residual branch and a five-block spatial-exploitation
//! branch, both consuming the raw image. Trained from random init; a saved
//! checkpoint can be imported over them in place of transfer learning.

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::model::layers::{BatchNorm2d, Conv2dLayer, InitCtx};
use crate::ops::conv::ConvCfg;
use crate::ops::pool::{PoolCfg, PoolMode};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Residual block: y = ReLU(T(x) + shortcut(x)), with the residual mapping
/// T = conv2(ReLU(bn(conv1(x)))). Block flavor M prefixes a 1×1 point-wise
/// conv; the projection shortcut appears whenever channels or stride change.
pub struct ResidualBlock {
    pub pwc: Option<Conv2dLayer>,
    pub conv1: Conv2dLayer,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2dLayer,
    pub shortcut: Option<Conv2dLayer>,
}

pub struct ResidualBlockCfg {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    /// M-flavor blocks carry the extra point-wise convolution.
    pub pointwise: bool,
}

impl ResidualBlock {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        cfg: &ResidualBlockCfg,
    ) -> Result<Self> {
        let pwc = if cfg.pointwise {
            Some(Conv2dLayer::init(
                ctx,
                &format!("{name}.pwc"),
                cfg.c_in,
                cfg.c_in,
                1,
                ConvCfg::new(1, 0),
                true,
            )?)
        } else {
            None
        };
        let conv1 = Conv2dLayer::init(
            ctx,
            &format!("{name}.conv1"),
            cfg.c_in,
            cfg.c_out,
            3,
            ConvCfg::new(cfg.stride, 1),
            true,
        )?;
        let bn1 = BatchNorm2d::init(ctx, &format!("{name}.bn1"), cfg.c_out)?;
        let conv2 = Conv2dLayer::init(
            ctx,
            &format!("{name}.conv2"),
            cfg.c_out,
            cfg.c_out,
            3,
            ConvCfg::new(1, 1),
            true,
        )?;
        let shortcut = if cfg.c_in != cfg.c_out || cfg.stride > 1 {
            Some(Conv2dLayer::init(
                ctx,
                &format!("{name}.shortcut"),
                cfg.c_in,
                cfg.c_out,
                1,
                ConvCfg::new(cfg.stride, 0),
                false,
            )?)
        } else {
            None
        };
        Ok(ResidualBlock {
            pwc,
            conv1,
            bn1,
            conv2,
            shortcut,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let mut t = x;
        if let Some(pwc) = &self.pwc {
            t = pwc.forward(g, ps, t)?;
        }
        t = self.conv1.forward(g, ps, t)?;
        t = self.bn1.forward(g, ps, t)?;
        t = g.relu(t);
        t = self.conv2.forward(g, ps, t)?;
        let sc = match &self.shortcut {
            Some(proj) => proj.forward(g, ps, x)?,
            None => x,
        };
        let sum = g.add(t, sc)?;
        Ok(g.relu(sum))
    }
}

/// Entry 3×3 stride-2 conv + four stride-2 residual blocks alternating
/// M, N, M, N flavors; widths rise to the final residual channel count.
pub struct ResidualBranch {
    pub entry: Conv2dLayer,
    pub entry_bn: BatchNorm2d,
    pub blocks: Vec<ResidualBlock>,
}

impl ResidualBranch {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        widths: &[usize],
    ) -> Result<Self> {
        if widths.len() != 4 {
            return Err(Error::Config(format!(
                "residual branch takes 4 widths, got {}",
                widths.len()
            )));
        }
        let entry_dim = widths[0];
        let entry = Conv2dLayer::init(
            ctx,
            &format!("{name}.entry"),
            3,
            entry_dim,
            3,
            ConvCfg::new(2, 1),
            true,
        )?;
        let entry_bn = BatchNorm2d::init(ctx, &format!("{name}.entry_bn"), entry_dim)?;
        let mut blocks = Vec::with_capacity(4);
        let mut c_in = entry_dim;
        for (i, &c_out) in widths.iter().enumerate() {
            blocks.push(ResidualBlock::init(
                ctx,
                &format!("{name}.block{i}"),
                &ResidualBlockCfg {
                    c_in,
                    c_out,
                    stride: 2,
                    pointwise: i % 2 == 0,
                },
            )?);
            c_in = c_out;
        }
        Ok(ResidualBranch {
            entry,
            entry_bn,
            blocks,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let mut cur = self.entry.forward(g, ps, x)?;
        cur = self.entry_bn.forward(g, ps, cur)?;
        cur = g.relu(cur);
        for block in &self.blocks {
            cur = block.forward(g, ps, cur)?;
        }
        Ok(cur)
    }
}

/// Spatial block: 3×3 pad-1 conv, batch norm, ReLU, 2×2 stride-2 pooling.
pub struct SpatialBlock {
    pub conv: Conv2dLayer,
    pub bn: BatchNorm2d,
    pub pool: PoolCfg,
}

impl SpatialBlock {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        pool_mode: PoolMode,
    ) -> Result<Self> {
        Ok(SpatialBlock {
            conv: Conv2dLayer::init(ctx, &format!("{name}.conv"), c_in, c_out, 3, ConvCfg::new(1, 1), true)?,
            bn: BatchNorm2d::init(ctx, &format!("{name}.bn"), c_out)?,
            pool: PoolCfg::new(2, 2, pool_mode),
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let mut cur = self.conv.forward(g, ps, x)?;
        cur = self.bn.forward(g, ps, cur)?;
        cur = g.relu(cur);
        g.pool2d(cur, self.pool)
    }
}

/// Five stacked spatial blocks, each halving resolution. The fourth block
/// pools by average, the rest by max.
pub struct SpatialBranch {
    pub blocks: Vec<SpatialBlock>,
}

impl SpatialBranch {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        widths: &[usize],
    ) -> Result<Self> {
        if widths.len() != 5 {
            return Err(Error::Config(format!(
                "spatial branch takes 5 widths, got {}",
                widths.len()
            )));
        }
        let mut blocks = Vec::with_capacity(5);
        let mut c_in = 3;
        for (i, &c_out) in widths.iter().enumerate() {
            let mode = if i == 3 { PoolMode::Avg } else { PoolMode::Max };
            blocks.push(SpatialBlock::init(
                ctx,
                &format!("{name}.block{i}"),
                c_in,
                c_out,
                mode,
            )?);
            c_in = c_out;
        }
        Ok(SpatialBranch { blocks })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let mut cur = x;
        for block in &self.blocks {
            cur = block.forward(g, ps, cur)?;
        }
        Ok(cur)
    }
}
