//! Central finite-difference verification of backward passes. Runs in f64
//! only; single precision cannot separate a wrong gradient from rounding.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Mode, Value};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckSettings {
    /// Max allowed |analytic - numeric| / max(1, |numeric|).
    pub tol: f64,
    /// Central-difference step h.
    pub step: f64,
    /// Cap on checked elements per tensor; None checks every element.
    /// Composite blocks use a cap so the whole-model check stays fast.
    pub max_elements: Option<usize>,
    /// Seed for element subsampling and the probe vector.
    pub seed: u64,
    /// Graph mode for the forward passes. Whole-model checks run in Eval:
    /// a single-sample input makes train-mode batch statistics degenerate
    /// once a block reaches 1×1 spatial extent.
    pub mode: Mode,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            tol: 1e-4,
            step: 1e-5,
            max_elements: None,
            seed: 0,
            mode: Mode::Train,
        }
    }
}

/// Worst element of one checked tensor.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub checked_elements: usize,
    pub worst_rel_err: f64,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckOutcome {
    pub per_tensor: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    /// Names the failing tensor/index, or None if the check passed.
    pub fn failure(&self) -> Option<&TensorCheck> {
        self.per_tensor
            .iter()
            .filter(|t| t.worst_rel_err > self.tol)
            .max_by(|a, b| a.worst_rel_err.total_cmp(&b.worst_rel_err))
    }
}

/// Deterministic probe tensor used to reduce a non-scalar output to the
/// scalar sum(out ⊙ r), exercising every output element.
pub fn probe(shape: Shape, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

/// Check d loss / d tensor for every named tensor against central finite
/// differences. `f` rebuilds the forward pass from the current leaf values
/// and must return a scalar node; it runs 1 + 2·(checked elements) times.
///
/// ReLU kinks: callers draw inputs away from zero (the harness nudges any
/// |x| < 1e-3 outward before checking).
pub fn grad_check<F>(
    tensors: &[(String, Tensor<f64>)],
    settings: &GradCheckSettings,
    f: F,
) -> Result<GradCheckOutcome>
where
    F: Fn(&mut Graph<f64>, &[Value]) -> Result<Value>,
{
    let nudged: Vec<(String, Tensor<f64>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), t.map(nudge_off_kink)))
        .collect();

    let eval = |current: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(settings.mode, false, settings.seed);
        let leaves: Vec<Value> = current.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = f(&mut g, &leaves)?;
        Ok(g.value(loss).data()[0])
    };

    // Analytic gradients in one recorded pass.
    let mut g = Graph::new(settings.mode, true, settings.seed);
    let leaves: Vec<Value> = nudged.iter().map(|(_, t)| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &leaves)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = leaves
        .iter()
        .zip(nudged.iter())
        .map(|(v, (_, t))| g.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut current: Vec<Tensor<f64>> = nudged.iter().map(|(_, t)| t.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let h = settings.step;
    let mut per_tensor = Vec::with_capacity(nudged.len());
    let mut max_rel = 0.0f64;

    for ti in 0..nudged.len() {
        let len = current[ti].len();
        let indices: Vec<usize> = match settings.max_elements {
            Some(cap) if len > cap => {
                let mut all: Vec<usize> = (0..len).collect();
                all.shuffle(&mut rng);
                let mut take: Vec<usize> = all.into_iter().take(cap).collect();
                take.sort_unstable();
                take
            }
            _ => (0..len).collect(),
        };
        let mut worst = TensorCheck {
            name: nudged[ti].0.clone(),
            checked_elements: indices.len(),
            worst_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for &idx in &indices {
            let base = current[ti].data()[idx];
            let plus = perturbed(&current[ti], idx, base + h);
            current[ti] = plus;
            let l_plus = eval(&current)?;
            let minus = perturbed(&current[ti], idx, base - h);
            current[ti] = minus;
            let l_minus = eval(&current)?;
            current[ti] = perturbed(&current[ti], idx, base);

            let numeric = (l_plus - l_minus) / (2.0 * h);
            let a = analytic[ti].data()[idx];
            let rel = (a - numeric).abs() / numeric.abs().max(1.0);
            if rel > worst.worst_rel_err {
                worst.worst_rel_err = rel;
                worst.worst_index = idx;
                worst.analytic_at_worst = a;
                worst.numeric_at_worst = numeric;
            }
        }
        max_rel = max_rel.max(worst.worst_rel_err);
        per_tensor.push(worst);
    }

    Ok(GradCheckOutcome {
        per_tensor,
        max_rel_err: max_rel,
        tol: settings.tol,
    })
}

/// Check a parameterized module: every trainable entry of `ps` plus the
/// input tensor become finite-difference leaves. `forward` sees the graph
/// with those leaves pre-bound to the parameter ids, runs the module, and
/// returns a scalar.
pub fn grad_check_module<F>(
    ps: &crate::params::ParamStore<f64>,
    input: Tensor<f64>,
    settings: &GradCheckSettings,
    forward: F,
) -> Result<GradCheckOutcome>
where
    F: Fn(&mut Graph<f64>, Value) -> Result<Value>,
{
    let trainable: Vec<crate::params::ParamId> =
        ps.ids().filter(|&id| ps.get(id).trainable).collect();
    let mut tensors: Vec<(String, Tensor<f64>)> = trainable
        .iter()
        .map(|&id| (ps.get(id).name.clone(), ps.value(id).clone()))
        .collect();
    tensors.push(("input".into(), input));
    let ids = trainable;
    grad_check(&tensors, settings, move |g, leaves| {
        let (input_leaf, param_leaves) = leaves.split_last().expect("at least the input");
        for (&id, &leaf) in ids.iter().zip(param_leaves.iter()) {
            g.seed_param(id, leaf);
        }
        forward(g, *input_leaf)
    })
}

fn nudge_off_kink(x: f64) -> f64 {
    if x.abs() < 1e-3 {
        if x >= 0.0 {
            x + 2e-3
        } else {
            x - 2e-3
        }
    } else {
        x
    }
}

fn perturbed(t: &Tensor<f64>, idx: usize, value: f64) -> Tensor<f64> {
    let mut data = t.data().to_vec();
    data[idx] = value;
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_exact() {
        // loss = sum((w*x) ⊙ r): d/dw must equal x ⊙ (r-weighted contraction)
        let x = Tensor::<f64>::matrix(2, 2, vec![0.5, -1.5, 2.0, 1.0]).unwrap();
        let w = Tensor::<f64>::matrix(2, 2, vec![0.3, 0.7, -0.2, 1.1]).unwrap();
        let r = probe(Shape::matrix(2, 2), 7);
        let outcome = grad_check(
            &[("w".into(), w)],
            &GradCheckSettings::default(),
            move |g, leaves| {
                let xv = g.leaf(x.clone(), false);
                let y = g.matmul(leaves[0], xv)?;
                g.dot_const(y, r.clone())
            },
        )
        .unwrap();
        assert!(outcome.passed(), "worst {:?}", outcome.failure());
        assert!(outcome.max_rel_err < 1e-7);
    }
}
