//! Small parameterized building blocks shared by the backbone, the
//! auxiliary branches and the fusion head.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Value};
use crate::ops::conv::ConvCfg;
use crate::params::{kaiming_normal, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Parameter construction context: store, init RNG, and the dotted name
/// prefix (e.g. "backbone.stage2.block0").
pub struct InitCtx<'a, T: Scalar> {
    pub ps: &'a mut ParamStore<T>,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a, T: Scalar> InitCtx<'a, T> {
    pub fn new(ps: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        InitCtx { ps, rng }
    }
}

pub struct Conv2dLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cfg: ConvCfg,
}

impl Conv2dLayer {
    /// Kaiming fan-in init for the kernel, zero bias.
    pub fn init<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        cfg: ConvCfg,
        with_bias: bool,
    ) -> Result<Self> {
        Self::init_rect(ctx, name, c_in, c_out, (k, k), cfg, with_bias)
    }

    pub fn init_rect<T: Scalar>(
        ctx: &mut InitCtx<'_, T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        cfg: ConvCfg,
        with_bias: bool,
    ) -> Result<Self> {
        let c_in_g = c_in / cfg.groups;
        let fan_in = c_in_g * kh * kw;
        let weight = ctx.ps.register(
            format!("{name}.w"),
            kaiming_normal(Shape::nchw(c_out, c_in_g, kh, kw), fan_in, ctx.rng),
            true,
        )?;
        let bias = if with_bias {
            Some(ctx.ps.register(
                format!("{name}.b"),
                Tensor::zeros(Shape::nchw(1, c_out, 1, 1)),
                true,
            )?)
        } else {
            None
        };
        Ok(Conv2dLayer { weight, bias, cfg })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let w = g.param(ps, self.weight);
        let b = self.bias.map(|id| g.param(ps, id));
        g.conv2d(x, w, b, self.cfg)
    }
}

pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, c: usize) -> Result<Self> {
        let shape = Shape::nchw(1, c, 1, 1);
        Ok(BatchNorm2d {
            gamma: ctx
                .ps
                .register(format!("{name}.gamma"), Tensor::filled(shape, T::ONE), true)?,
            beta: ctx
                .ps
                .register(format!("{name}.beta"), Tensor::zeros(shape), true)?,
            running_mean: ctx
                .ps
                .register(format!("{name}.running_mean"), Tensor::zeros(shape), false)?,
            running_var: ctx.ps.register(
                format!("{name}.running_var"),
                Tensor::filled(shape, T::ONE),
                false,
            )?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.batch_norm(
            x,
            gamma,
            beta,
            self.running_mean,
            self.running_var,
            ps,
            self.eps,
            self.momentum,
        )
    }
}

pub struct LayerNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm2d {
    pub fn init<T: Scalar>(ctx: &mut InitCtx<'_, T>, name: &str, c: usize) -> Result<Self> {
        let shape = Shape::nchw(1, c, 1, 1);
        Ok(LayerNorm2d {
            gamma: ctx
                .ps
                .register(format!("{name}.gamma"), Tensor::filled(shape, T::ONE), true)?,
            beta: ctx
                .ps
                .register(format!("{name}.beta"), Tensor::zeros(shape), true)?,
            eps: 1e-5,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        ps: &ParamStore<T>,
        x: Value,
    ) -> Result<Value> {
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        g.layer_norm(x, gamma, beta, self.eps)
    }
}
