//! The transformer block family: patch embedding, local perception unit,
//! lightweight multi-head self-attention with stride-2 reduced keys/values,
//! and the inverted-residual feed-forward network.

use crate::error::Result;
use crate::graph::{Graph, Value};
use crate::model::layers::{Conv2dLayer, InitCtx, LayerNorm2d};
use crate::ops::attention::AttnGeom;
use crate::ops::conv::ConvCfg;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 3×3 convolution (stride 1 or 2, pad 1) followed by a per-token layer
/// norm over channels.
pub struct PatchEmbed {
    pub conv: Conv2dLayer,
    pub ln: LayerNorm2d,
}

impl PatchEmbed {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        Ok(PatchEmbed {
            conv: Conv2dLayer::init(ctx, &format!("{name}.conv"), c_in, c_out, 3, ConvCfg::new(stride, 1), true)?,
            ln: LayerNorm2d::init(ctx, &format!("{name}.ln"), c_out)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let y = self.conv.forward(g, ps, x)?;
        self.ln.forward(g, ps, y)
    }
}

/// Local perception unit: depthwise 3×3 added residually, LPU(x) = conv(x) + x.
pub struct Lpu {
    pub dw: Conv2dLayer,
}

impl Lpu {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, dim: usize) -> Result<Self> {
        Ok(Lpu {
            dw: Conv2dLayer::init(ctx, &format!("{name}.dw"), dim, dim, 3, ConvCfg::grouped(1, 1, dim), false)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let y = self.dw.forward(g, ps, x)?;
        g.add(y, x)
    }
}

/// Lightweight multi-head self-attention. Queries are a 1×1 projection of
/// the input at full resolution; keys/values are 1×1 projections reduced by
/// depthwise 3×3 stride-2 convolutions (skipped at 2×2 or smaller input,
/// where that reduction degenerates). A learned per-head relative position
/// bias is added to the scores before softmax.
pub struct Lmhsa {
    pub wq: Conv2dLayer,
    pub wk: Conv2dLayer,
    pub wv: Conv2dLayer,
    pub dw_k: Conv2dLayer,
    pub dw_v: Conv2dLayer,
    pub w0: Conv2dLayer,
    pub bias_table: ParamId,
    pub heads: usize,
    pub window: Option<usize>,
    /// Resolution the bias table was sized for (serves any input up to it).
    pub max_grid: (usize, usize),
}

impl Lmhsa {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        dim: usize,
        heads: usize,
        max_grid: (usize, usize),
        window: Option<usize>,
    ) -> Result<Self> {
        let one = ConvCfg::new(1, 0);
        let red = ConvCfg::grouped(2, 1, dim);
        let (bins, _center) = AttnGeom::symmetric_bias_layout(max_grid.0, max_grid.1);
        let bias_table = ctx.ps.register(
            format!("{name}.bias_table"),
            Tensor::zeros(crate::tensor::Shape::nchw(1, heads, bins.0, bins.1)),
            true,
        )?;
        Ok(Lmhsa {
            wq: Conv2dLayer::init(ctx, &format!("{name}.wq"), dim, dim, 1, one, true)?,
            wk: Conv2dLayer::init(ctx, &format!("{name}.wk"), dim, dim, 1, one, true)?,
            wv: Conv2dLayer::init(ctx, &format!("{name}.wv"), dim, dim, 1, one, true)?,
            dw_k: Conv2dLayer::init(ctx, &format!("{name}.dw_k"), dim, dim, 3, red, false)?,
            dw_v: Conv2dLayer::init(ctx, &format!("{name}.dw_v"), dim, dim, 3, red, false)?,
            w0: Conv2dLayer::init(ctx, &format!("{name}.w0"), dim, dim, 1, one, true)?,
            bias_table,
            heads,
            window,
            max_grid,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let (h, w) = (g.value(x).shape().h(), g.value(x).shape().w());
        let q = self.wq.forward(g, ps, x)?;
        let k_full = self.wk.forward(g, ps, x)?;
        let v_full = self.wv.forward(g, ps, x)?;
        // stride-2 reduction degenerates at 2x2 and below
        let reduce = h > 2 && w > 2;
        let (k, v, center_stride) = if reduce {
            (
                self.dw_k.forward(g, ps, k_full)?,
                self.dw_v.forward(g, ps, v_full)?,
                2,
            )
        } else {
            (k_full, v_full, 1)
        };
        let (bins, center) = AttnGeom::symmetric_bias_layout(self.max_grid.0, self.max_grid.1);
        let geom = AttnGeom::with_bias_layout(
            g.value(q),
            g.value(k),
            self.heads,
            center_stride,
            self.window,
            bins,
            center,
        )?;
        let bias = g.param(ps, self.bias_table);
        let attended = g.attention(q, k, v, bias, geom)?;
        self.w0.forward(g, ps, attended)
    }
}

/// Inverted-residual feed-forward: 1×1 expand (d → r·d), GELU, depthwise
/// 3×3 with an inner residual, 1×1 project (r·d → d).
pub struct Irffn {
    pub expand: Conv2dLayer,
    pub dw: Conv2dLayer,
    pub project: Conv2dLayer,
}

impl Irffn {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        dim: usize,
        ratio: usize,
    ) -> Result<Self> {
        let hidden = dim * ratio;
        let one = ConvCfg::new(1, 0);
        Ok(Irffn {
            expand: Conv2dLayer::init(ctx, &format!("{name}.expand"), dim, hidden, 1, one, true)?,
            dw: Conv2dLayer::init(ctx, &format!("{name}.dw"), hidden, hidden, 3, ConvCfg::grouped(1, 1, hidden), false)?,
            project: Conv2dLayer::init(ctx, &format!("{name}.project"), hidden, dim, 1, one, true)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let e = self.expand.forward(g, ps, x)?;
        let a = g.gelu(e);
        let d = self.dw.forward(g, ps, a)?;
        let f = g.add(d, a)?;
        self.project.forward(g, ps, f)
    }
}

/// One transformer block: local perception, pre-norm attention residual,
/// pre-norm feed-forward residual. With every trainable sub-parameter at
/// zero the block is the identity map.
pub struct IctBlock {
    pub lpu: Lpu,
    pub ln1: LayerNorm2d,
    pub attn: Lmhsa,
    pub ln2: LayerNorm2d,
    pub ffn: Irffn,
    /// Feed the FFN from ln(y) instead of ln(z) (literal equation form).
    pub eq10_literal: bool,
}

pub struct IctBlockCfg {
    pub dim: usize,
    pub heads: usize,
    pub max_grid: (usize, usize),
    pub irffn_ratio: usize,
    pub attn_window: Option<usize>,
    pub eq10_literal: bool,
}

impl IctBlock {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, cfg: &IctBlockCfg) -> Result<Self> {
        Ok(IctBlock {
            lpu: Lpu::init(ctx, &format!("{name}.lpu"), cfg.dim)?,
            ln1: LayerNorm2d::init(ctx, &format!("{name}.ln1"), cfg.dim)?,
            attn: Lmhsa::init(
                ctx,
                &format!("{name}.lmhsa"),
                cfg.dim,
                cfg.heads,
                cfg.max_grid,
                cfg.attn_window,
            )?,
            ln2: LayerNorm2d::init(ctx, &format!("{name}.ln2"), cfg.dim)?,
            ffn: Irffn::init(ctx, &format!("{name}.irffn"), cfg.dim, cfg.irffn_ratio)?,
            eq10_literal: cfg.eq10_literal,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let y = self.lpu.forward(g, ps, x)?;
        let n1 = self.ln1.forward(g, ps, y)?;
        let a = self.attn.forward(g, ps, n1)?;
        let z = g.add(a, y)?;
        // default: feed-forward sees the normalized post-attention stream;
        // the literal equation form norms y again and bypasses z on input
        let ffn_in = if self.eq10_literal {
            self.ln2.forward(g, ps, y)?
        } else {
            self.ln2.forward(g, ps, z)?
        };
        let f = self.ffn.forward(g, ps, ffn_in)?;
        g.add(f, z)
    }
}
