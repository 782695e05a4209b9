//! Reverse-mode autodiff tape. A `Graph` records one forward computation;
//! `backward` walks the nodes in reverse creation order and accumulates
//! gradients. Ops themselves are pure kernels (see `ops`); the graph only
//! wires saved state into boxed backward closures.
//!
//! One graph serves one forward pass (or forward+backward step). Concurrent
//! inference uses one graph per thread over a shared read-only `ParamStore`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::activation::{activation, activation_backward, softmax, softmax_backward, Activation};
use crate::ops::attention::{attention_core, attention_core_backward, AttnGeom};
use crate::ops::conv::{conv2d, conv2d_backward, ConvCfg};
use crate::ops::norm::{
    batch_norm_eval, batch_norm_eval_backward, batch_norm_train, batch_norm_train_backward,
    layer_norm, layer_norm_backward,
};
use crate::ops::pool::{
    adaptive_avg_pool, adaptive_avg_pool_backward, global_avg_pool, global_avg_pool_backward,
    pool2d, pool2d_backward, PoolCfg,
};
use crate::ops::linear::matmul_backward;
use crate::ops::shape::{
    add, channel_max, channel_max_backward, channel_mean, channel_mean_backward,
    concat_channels, concat_channels_backward, dot_const, dropout_apply, dropout_backward,
    mul_channel_gate, mul_channel_gate_backward, mul_pixel_gate, mul_pixel_gate_backward, scale,
    slice_channels, slice_channels_backward,
};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

/// Handle to a node in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

type Sink<'a, T> = dyn FnMut(usize, Tensor<T>) + 'a;
type BackFn<T> = Box<dyn FnOnce(&Tensor<T>, &[Tensor<T>], &mut Sink<'_, T>)>;

pub struct Graph<T: Scalar> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    backs: Vec<Option<BackFn<T>>>,
    needs: Vec<bool>,
    mode: Mode,
    grad_enabled: bool,
    rng: ChaCha8Rng,
    param_leaves: HashMap<usize, Value>,
    stat_updates: Vec<(ParamId, Tensor<T>)>,
    /// Multiply-adds executed by attention q·kᵀ stages in this graph.
    pub qk_macs: u64,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode, grad_enabled: bool, seed: u64) -> Self {
        Graph {
            values: Vec::new(),
            grads: Vec::new(),
            backs: Vec::new(),
            needs: Vec::new(),
            mode,
            grad_enabled,
            rng: ChaCha8Rng::seed_from_u64(seed),
            param_leaves: HashMap::new(),
            stat_updates: Vec::new(),
            qk_macs: 0,
        }
    }

    pub fn train(seed: u64) -> Self {
        Graph::new(Mode::Train, true, seed)
    }

    pub fn inference() -> Self {
        Graph::new(Mode::Eval, false, 0)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Value) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// Gradient of a node after `backward`, reshaped to the node's shape.
    pub fn grad(&self, v: Value) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_vec(self.values[v.0].shape(), g.clone()).expect("grad shape"))
    }

    fn push(&mut self, value: Tensor<T>, needs: bool, back: Option<BackFn<T>>) -> Value {
        self.values.push(value);
        self.grads.push(None);
        self.backs.push(back);
        self.needs.push(needs);
        Value(self.values.len() - 1)
    }

    fn wants(&self, parents: &[Value]) -> bool {
        self.grad_enabled && parents.iter().any(|p| self.needs[p.0])
    }

    pub fn leaf(&mut self, t: Tensor<T>, needs_grad: bool) -> Value {
        let needs = self.grad_enabled && needs_grad;
        self.push(t, needs, None)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Value {
        self.push(t, false, None)
    }

    /// Insert a parameter as a leaf, memoized per id so a parameter used in
    /// several places accumulates one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Value {
        if let Some(&v) = self.param_leaves.get(&id.0) {
            return v;
        }
        let trainable = store.get(id).trainable;
        let v = self.leaf(store.value(id).clone(), trainable);
        self.param_leaves.insert(id.0, v);
        v
    }

    /// Pre-bind a parameter id to an existing node, overriding what
    /// `param` would insert. The gradient checker uses this to drive module
    /// forwards from its own perturbed leaves.
    pub fn seed_param(&mut self, id: ParamId, v: Value) {
        self.param_leaves.insert(id.0, v);
    }

    /// Gradients of every parameter leaf touched in this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = Vec::new();
        let mut ids: Vec<&usize> = self.param_leaves.keys().collect();
        ids.sort_unstable();
        for &id in ids {
            if let Some(g) = self.grad(self.param_leaves[&id]) {
                out.push((ParamId(id), g));
            }
        }
        out
    }

    pub fn push_stat_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.stat_updates.push((id, value));
    }

    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.stat_updates)
    }

    /// Reverse sweep from a scalar node. Each node's backward runs once.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(Error::Config("backward requires a scalar node".into()));
        }
        if !self.grad_enabled {
            return Err(Error::Config("backward on a no-grad graph".into()));
        }
        self.grads[loss.0] = Some(vec![T::ONE]);
        for i in (0..=loss.0).rev() {
            if self.grads[i].is_none() {
                continue;
            }
            let Some(f) = self.backs[i].take() else {
                continue;
            };
            let grad_t = Tensor::from_vec(
                self.values[i].shape(),
                self.grads[i].as_ref().expect("just checked").clone(),
            )?;
            let values = &self.values;
            let grads = &mut self.grads;
            let needs = &self.needs;
            let mut sink = |node: usize, g: Tensor<T>| {
                if !needs[node] {
                    return;
                }
                debug_assert_eq!(g.shape(), values[node].shape());
                match &mut grads[node] {
                    Some(slot) => {
                        for (s, &gv) in slot.iter_mut().zip(g.data()) {
                            *s += gv;
                        }
                    }
                    slot @ None => *slot = Some(g.data().to_vec()),
                }
            };
            f(&grad_t, values, &mut sink);
        }
        Ok(())
    }

    // Ops

    pub fn conv2d(
        &mut self,
        x: Value,
        weight: Value,
        bias: Option<Value>,
        cfg: ConvCfg,
    ) -> Result<Value> {
        let out = conv2d(
            &self.values[x.0],
            &self.values[weight.0],
            bias.map(|b| &self.values[b.0]),
            &cfg,
        )?;
        let needs = self.wants(&[x, weight]) || bias.map_or(false, |b| self.needs[b.0]);
        let back: Option<BackFn<T>> = if needs {
            let need_x = self.needs[x.0];
            Some(Box::new(move |go, values, sink| {
                let grads = conv2d_backward(
                    &values[x.0],
                    &values[weight.0],
                    bias.is_some(),
                    need_x,
                    &cfg,
                    go,
                )
                .expect("validated in forward");
                if let Some(gx) = grads.x {
                    sink(x.0, gx);
                }
                sink(weight.0, grads.weight);
                if let (Some(b), Some(gb)) = (bias, grads.bias) {
                    sink(b.0, gb);
                }
            }))
        } else {
            None
        };
        Ok(self.push(out, needs, back))
    }

    pub fn pool2d(&mut self, x: Value, cfg: PoolCfg) -> Result<Value> {
        let (out, saved) = pool2d(&self.values[x.0], &cfg)?;
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, pool2d_backward(x_shape, &cfg, &saved, go).expect("pool grad"));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn global_avg_pool(&mut self, x: Value) -> Value {
        let out = global_avg_pool(&self.values[x.0]);
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, global_avg_pool_backward(x_shape, go));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    pub fn adaptive_avg_pool(&mut self, x: Value, oh: usize, ow: usize) -> Result<Value> {
        let out = adaptive_avg_pool(&self.values[x.0], oh, ow)?;
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, adaptive_avg_pool_backward(x_shape, go));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    /// Batch norm that picks train/eval behavior from the graph mode. In
    /// train mode the running-stat refresh is queued on the graph and applied
    /// by the owner of the store after the step (single-writer discipline).
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Value,
        gamma: Value,
        beta: Value,
        running_mean: ParamId,
        running_var: ParamId,
        store: &ParamStore<T>,
        eps: f64,
        momentum: f64,
    ) -> Result<Value> {
        match self.mode {
            Mode::Train => {
                let (out, saved) = batch_norm_train(
                    &self.values[x.0],
                    &self.values[gamma.0],
                    &self.values[beta.0],
                    eps,
                )?;
                let mom = lit::<T>(momentum);
                let keep = T::ONE - mom;
                let old_mean = store.value(running_mean);
                let old_var = store.value(running_var);
                let new_mean: Vec<T> = old_mean
                    .data()
                    .iter()
                    .zip(saved.mean.iter())
                    .map(|(&o, &b)| o * keep + b * mom)
                    .collect();
                let new_var: Vec<T> = old_var
                    .data()
                    .iter()
                    .zip(saved.var.iter())
                    .map(|(&o, &b)| o * keep + b * mom)
                    .collect();
                self.push_stat_update(running_mean, Tensor::from_vec(old_mean.shape(), new_mean)?);
                self.push_stat_update(running_var, Tensor::from_vec(old_var.shape(), new_var)?);

                let needs = self.wants(&[x, gamma, beta]);
                let x_shape = self.values[x.0].shape();
                let back: Option<BackFn<T>> = needs.then(|| {
                    Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                        let (gx, dgamma, dbeta) =
                            batch_norm_train_backward(x_shape, &values[gamma.0], &saved, go);
                        sink(x.0, gx);
                        sink(gamma.0, dgamma);
                        sink(beta.0, dbeta);
                    }) as BackFn<T>
                });
                Ok(self.push(out, needs, back))
            }
            Mode::Eval => {
                let rm = store.value(running_mean).clone();
                let rv = store.value(running_var).clone();
                let out = batch_norm_eval(
                    &self.values[x.0],
                    &self.values[gamma.0],
                    &self.values[beta.0],
                    &rm,
                    &rv,
                    eps,
                )?;
                let needs = self.wants(&[x, gamma, beta]);
                let back: Option<BackFn<T>> = needs.then(|| {
                    Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                        let (gx, dgamma, dbeta) = batch_norm_eval_backward(
                            &values[x.0],
                            &values[gamma.0],
                            &rm,
                            &rv,
                            eps,
                            go,
                        );
                        sink(x.0, gx);
                        sink(gamma.0, dgamma);
                        sink(beta.0, dbeta);
                    }) as BackFn<T>
                });
                Ok(self.push(out, needs, back))
            }
        }
    }

    pub fn layer_norm(&mut self, x: Value, gamma: Value, beta: Value, eps: f64) -> Result<Value> {
        let (out, saved) = layer_norm(
            &self.values[x.0],
            &self.values[gamma.0],
            &self.values[beta.0],
            eps,
        )?;
        let needs = self.wants(&[x, gamma, beta]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let (gx, dgamma, dbeta) =
                    layer_norm_backward(x_shape, &values[gamma.0], &saved, go);
                sink(x.0, gx);
                sink(gamma.0, dgamma);
                sink(beta.0, dbeta);
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn activation(&mut self, x: Value, kind: Activation) -> Value {
        let out = activation(&self.values[x.0], kind);
        let needs = self.wants(&[x]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, activation_backward(&values[x.0], kind, go));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.activation(x, Activation::Relu)
    }

    pub fn gelu(&mut self, x: Value) -> Value {
        self.activation(x, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Value, axis: usize) -> Result<Value> {
        let out = softmax(&self.values[x.0], axis)?;
        let needs = self.wants(&[x]);
        let y = out.clone();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, softmax_backward(&y, axis, go));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let out = crate::ops::linear::matmul(&self.values[a.0], &self.values[b.0])?;
        let needs = self.wants(&[a, b]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let (da, db) = matmul_backward(&values[a.0], &values[b.0], go);
                sink(a.0, da);
                sink(b.0, db);
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        let out = add(&self.values[a.0], &self.values[b.0])?;
        let needs = self.wants(&[a, b]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(a.0, go.clone());
                sink(b.0, go.clone());
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn scale(&mut self, x: Value, factor: T) -> Value {
        let out = scale(&self.values[x.0], factor);
        let needs = self.wants(&[x]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, scale(go, factor));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    pub fn concat_channels(&mut self, xs: &[Value]) -> Result<Value> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|v| &self.values[v.0]).collect();
        let out = concat_channels(&tensors)?;
        let needs = self.wants(xs);
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let shapes: Vec<Shape> = tensors.iter().map(|t| t.shape()).collect();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                for (id, g) in ids.iter().zip(concat_channels_backward(&shapes, go)) {
                    sink(*id, g);
                }
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn slice_channels(&mut self, x: Value, from: usize, to: usize) -> Result<Value> {
        let out = slice_channels(&self.values[x.0], from, to)?;
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, slice_channels_backward(x_shape, from, go));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn mul_channel_gate(&mut self, x: Value, gate: Value) -> Result<Value> {
        let out = mul_channel_gate(&self.values[x.0], &self.values[gate.0])?;
        let needs = self.wants(&[x, gate]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let (gx, gg) = mul_channel_gate_backward(&values[x.0], &values[gate.0], go);
                sink(x.0, gx);
                sink(gate.0, gg);
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn mul_pixel_gate(&mut self, x: Value, gate: Value) -> Result<Value> {
        let out = mul_pixel_gate(&self.values[x.0], &self.values[gate.0])?;
        let needs = self.wants(&[x, gate]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let (gx, gg) = mul_pixel_gate_backward(&values[x.0], &values[gate.0], go);
                sink(x.0, gx);
                sink(gate.0, gg);
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    pub fn channel_mean(&mut self, x: Value) -> Value {
        let out = channel_mean(&self.values[x.0]);
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, channel_mean_backward(x_shape, go));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    pub fn channel_max(&mut self, x: Value) -> Value {
        let (out, arg) = channel_max(&self.values[x.0]);
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, channel_max_backward(x_shape, &arg, go));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, x: Value, p: f64) -> Value {
        if self.mode == Mode::Eval || p <= 0.0 {
            return x;
        }
        let mask: Vec<bool> = (0..self.values[x.0].len())
            .map(|_| self.rng.gen::<f64>() >= p)
            .collect();
        let out = dropout_apply(&self.values[x.0], &mask, p);
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, dropout_backward(x_shape, &mask, p, go));
            }) as BackFn<T>
        });
        self.push(out, needs, back)
    }

    pub fn attention(
        &mut self,
        q: Value,
        k: Value,
        v: Value,
        bias: Value,
        geom: AttnGeom,
    ) -> Result<Value> {
        let (out, saved) = attention_core(
            &self.values[q.0],
            &self.values[k.0],
            &self.values[v.0],
            &self.values[bias.0],
            &geom,
        )?;
        self.qk_macs += saved.qk_macs;
        let needs = self.wants(&[q, k, v, bias]);
        let bias_shape = self.values[bias.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, values: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let grads = attention_core_backward(
                    &values[q.0],
                    &values[k.0],
                    &values[v.0],
                    bias_shape,
                    &saved,
                    go,
                );
                sink(q.0, grads.q);
                sink(k.0, grads.k);
                sink(v.0, grads.v);
                sink(bias.0, grads.bias);
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    /// Fused softmax + cross entropy over logits (N, K, 1, 1). Returns the
    /// scalar mean loss; the backward is the closed-form (p - onehot)·w_y / N.
    pub fn cross_entropy(
        &mut self,
        logits: Value,
        labels: &[usize],
        class_weights: Option<&[T]>,
    ) -> Result<Value> {
        let lt = &self.values[logits.0];
        let (n, k) = (lt.shape().n(), lt.shape().c());
        if lt.shape().h() != 1 || lt.shape().w() != 1 {
            return Err(Error::dim_ctx("logit plane", 1, lt.shape().h() * lt.shape().w(), "logits must be (N,K,1,1)"));
        }
        if labels.len() != n {
            return Err(Error::dim("labels", n, labels.len()));
        }
        if let Some(lbl) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {lbl} out of range 0..{k}")));
        }
        let weights: Vec<T> = match class_weights {
            Some(w) => {
                if w.len() != k {
                    return Err(Error::dim("class weights", k, w.len()));
                }
                w.to_vec()
            }
            None => vec![T::ONE; k],
        };
        let probs = softmax(lt, 1)?;
        let inv_n = T::ONE / lit::<T>(n as f64);
        let mut loss = T::ZERO;
        let floor = lit::<T>(1e-12);
        for (i, &y) in labels.iter().enumerate() {
            let p = probs.data()[i * k + y].max(floor);
            loss -= weights[y] * p.ln();
        }
        loss *= inv_n;
        let out = Tensor::from_vec(Shape::matrix(1, 1), vec![loss])?;
        let needs = self.wants(&[logits]);
        let labels = labels.to_vec();
        let logits_shape = lt.shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                let upstream = go.data()[0];
                let mut g = vec![T::ZERO; n * k];
                for (i, &y) in labels.iter().enumerate() {
                    let w = weights[y] * inv_n * upstream;
                    for c in 0..k {
                        let onehot = if c == y { T::ONE } else { T::ZERO };
                        g[i * k + c] = w * (probs.data()[i * k + c] - onehot);
                    }
                }
                sink(
                    logits.0,
                    Tensor::from_vec(logits_shape, g).expect("ce grad shape"),
                );
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    /// Relabel the shape of a node; data is row-major so this is free.
    pub fn reshape(&mut self, x: Value, shape: Shape) -> Result<Value> {
        let out = self.values[x.0].reshaped(shape)?;
        let needs = self.wants(&[x]);
        let x_shape = self.values[x.0].shape();
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, go.reshaped(x_shape).expect("same length"));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }

    /// Scalar probe sum(x ⊙ r) with constant r; the gradient seed for
    /// finite-difference checks of non-scalar outputs.
    pub fn dot_const(&mut self, x: Value, r: Tensor<T>) -> Result<Value> {
        let out = dot_const(&self.values[x.0], &r)?;
        let needs = self.wants(&[x]);
        let back: Option<BackFn<T>> = needs.then(|| {
            Box::new(move |go: &Tensor<T>, _: &[Tensor<T>], sink: &mut Sink<'_, T>| {
                sink(x.0, scale(&r, go.data()[0]));
            }) as BackFn<T>
        });
        Ok(self.push(out, needs, back))
    }
}
