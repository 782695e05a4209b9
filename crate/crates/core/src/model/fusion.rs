//! Fusion head: channel refinement of the auxiliary maps, channel-wise
//! augmentation into the backbone stream, pixel-level spatial attention,
//! and the softmax classifier.

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Value};
use crate::model::layers::{Conv2dLayer, InitCtx};
use crate::ops::conv::ConvCfg;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Shape;

/// Channel-Fusion-and-Attention: GAP → 1-D conv (kernel 3) over the channel
/// axis → square FC → sigmoid, giving per-channel weights a ∈ (0,1); the
/// refined map is c + c ⊗ a, so non-negative inputs stay within [c, 2c].
pub struct Cfa {
    pub conv1d: Conv2dLayer,
    pub fc: Conv2dLayer,
    pub channels: usize,
}

impl Cfa {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, channels: usize) -> Result<Self> {
        // the pooled channel vector is viewed as (N,1,1,C); kernel (1,3),
        // pad (0,1) slides along the channel axis
        let conv1d = Conv2dLayer::init_rect(
            ctx,
            &format!("{name}.conv1d"),
            1,
            1,
            (1, 3),
            ConvCfg {
                stride: 1,
                pad_h: 0,
                pad_w: 1,
                groups: 1,
            },
            true,
        )?;
        let fc = Conv2dLayer::init(
            ctx,
            &format!("{name}.fc"),
            channels,
            channels,
            1,
            ConvCfg::new(1, 0),
            true,
        )?;
        Ok(Cfa {
            conv1d,
            fc,
            channels,
        })
    }

    /// Refine one auxiliary map: out = c + c ⊗ sigmoid(fc(conv1d(gap(c)))).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        c: Value,
    ) -> Result<Value> {
        let shape = g.value(c).shape();
        if shape.c() != self.channels {
            return Err(Error::Config(format!(
                "channel attention built for {} channels, input has {}",
                self.channels,
                shape.c()
            )));
        }
        let n = shape.n();
        let pooled = g.global_avg_pool(c); // (N, C, 1, 1)
        let as_seq = g.reshape(pooled, Shape::nchw(n, 1, 1, self.channels))?;
        let mixed = self.conv1d.forward(g, ps, as_seq)?;
        let back = g.reshape(mixed, Shape::nchw(n, self.channels, 1, 1))?;
        let fc_out = self.fc.forward(g, ps, back)?;
        let gate = g.sigmoid(fc_out);
        let weighted = g.mul_channel_gate(c, gate)?;
        g.add(c, weighted)
    }
}

/// Concatenate the two refined auxiliary maps with the backbone map along
/// channels, adapting auxiliary grids onto the backbone grid by adaptive
/// average pooling when they disagree.
pub fn channel_augment<T: Scalar>(
    g: &mut Graph<T>,
    res_refined: Value,
    spat_refined: Value,
    backbone: Value,
) -> Result<Value> {
    let (bh, bw) = (g.value(backbone).shape().h(), g.value(backbone).shape().w());
    let mut parts = Vec::with_capacity(3);
    for v in [res_refined, spat_refined] {
        let s = g.value(v).shape();
        if (s.h(), s.w()) != (bh, bw) {
            parts.push(g.adaptive_avg_pool(v, bh, bw)?);
        } else {
            parts.push(v);
        }
    }
    parts.push(backbone);
    g.concat_channels(&parts)
}

/// Pixel attention: channel-average and channel-max maps are concatenated,
/// passed through a 7×7 conv, and squashed to gates in (0,1) that scale the
/// input elementwise, so |out| <= |x| everywhere.
pub struct SpatialAttention {
    pub conv: Conv2dLayer,
}

impl SpatialAttention {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str) -> Result<Self> {
        Ok(SpatialAttention {
            conv: Conv2dLayer::init(ctx, &format!("{name}.conv"), 2, 1, 7, ConvCfg::new(1, 3), true)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let avg = g.channel_mean(x);
        let max = g.channel_max(x);
        let stacked = g.concat_channels(&[avg, max])?;
        let conv = self.conv.forward(g, ps, stacked)?;
        let gate = g.sigmoid(conv);
        g.mul_pixel_gate(x, gate)
    }
}

/// Classifier: GAP → dropout (train only) → FC → 5-way logits. The
/// penultimate features (pre-softmax, post-GAP) feed the embedding export.
pub struct Head {
    pub fc: Conv2dLayer,
    pub dropout: f64,
}

pub struct HeadOut {
    pub logits: Value,
    /// Pooled pre-classifier features, (N, C, 1, 1).
    pub penultimate: Value,
}

impl Head {
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        c_in: usize,
        classes: usize,
        dropout: f64,
    ) -> Result<Self> {
        Ok(Head {
            fc: Conv2dLayer::init(ctx, &format!("{name}.fc"), c_in, classes, 1, ConvCfg::new(1, 0), true)?,
            dropout,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<HeadOut> {
        let penultimate = g.global_avg_pool(x);
        let dropped = if g.mode() == Mode::Train {
            g.dropout(penultimate, self.dropout)
        } else {
            penultimate
        };
        let logits = self.fc.forward(g, ps, dropped)?;
        Ok(HeadOut {
            logits,
            penultimate,
        })
    }
}
