//! Adam with bias correction, decoupled weight decay, and the step-decay
//! learning-rate schedule (a fresh rate multiplier every `decay_every`
//! epochs).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    /// Multiplier applied at each decay boundary; "decayed by 85%" reads
    /// as new = 0.15 × old. The ×0.85 reading stays available through this
    /// field.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// false = decoupled decay (θ ← θ − lr·wd·θ before the update);
    /// true = classic L2 added into the gradient.
    pub coupled_weight_decay: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 1e-3,
            decay_factor: 0.15,
            decay_every: 20,
            weight_decay: 0.04,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            coupled_weight_decay: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct OptimState {
    /// Completed optimizer steps (bias correction uses step + 1).
    pub step: u64,
}

/// lr(e) = lr0 · decay_factor^floor(e / decay_every); piecewise constant
/// with breakpoints exactly at multiples of decay_every.
pub fn lr_at_epoch(epoch: usize, cfg: &OptimConfig) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// One Adam update over the supplied (parameter, gradient) pairs. Gradients
/// must be finite; a NaN/Inf aborts naming the parameter. Parameters not
/// listed are untouched.
pub fn adam_step<T: Scalar>(
    ps: &mut ParamStore<T>,
    grads: &[(ParamId, Tensor<T>)],
    state: &mut OptimState,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (id, grad) in grads {
        let name_check = {
            let p = ps.get(*id);
            if !p.trainable {
                continue;
            }
            grad.data().iter().position(|g| !g.is_finite()).map(|i| (p.name.clone(), i))
        };
        if let Some((name, i)) = name_check {
            return Err(Error::NonFinite(format!(
                "gradient of {name} at flat index {i}"
            )));
        }
        let p = ps.get_mut(*id);
        let mut value = p.value.data().to_vec();
        if cfg.weight_decay != 0.0 && !cfg.coupled_weight_decay {
            let shrink = T::from_f64(lr * cfg.weight_decay);
            for v in value.iter_mut() {
                *v -= shrink * *v;
            }
        }
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(cfg.eps);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let wd = T::from_f64(cfg.weight_decay);
        for (i, g0) in grad.data().iter().enumerate() {
            let mut g = *g0;
            if cfg.coupled_weight_decay && cfg.weight_decay != 0.0 {
                g += wd * value[i];
            }
            p.m[i] = b1 * p.m[i] + one_m_b1 * g;
            p.v[i] = b2 * p.v[i] + one_m_b2 * g * g;
            let m_hat = p.m[i] * inv_bc1;
            let v_hat = p.v[i] * inv_bc2;
            value[i] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        p.value = Tensor::from_vec(p.value.shape(), value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut ps = ParamStore::new();
        let id = ps
            .register("theta", Tensor::from_vec(Shape::matrix(1, 1), vec![v]).unwrap(), true)
            .unwrap();
        (ps, id)
    }

    #[test]
    fn schedule_breakpoints() {
        let cfg = OptimConfig::default();
        assert_eq!(lr_at_epoch(0, &cfg), 1e-3);
        assert_eq!(lr_at_epoch(19, &cfg), 1e-3);
        assert!((lr_at_epoch(20, &cfg) - 1.5e-4).abs() < 1e-18);
        assert!((lr_at_epoch(40, &cfg) - 2.25e-5).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let (mut ps, id) = scalar_store(0.7);
        let mut state = OptimState::default();
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let zero = Tensor::zeros(Shape::matrix(1, 1));
        adam_step(&mut ps, &[(id, zero)], &mut state, &cfg, 1e-3).unwrap();
        assert_eq!(ps.value(id).data()[0], 0.7);
        assert_eq!(ps.get(id).m[0], 0.0);
        assert_eq!(ps.get(id).v[0], 0.0);
    }

    #[test]
    fn first_step_matches_hand_derivation() {
        // g=1 at t=1: m̂ = v̂ = 1, so Δθ = −lr / (1 + eps)
        let (mut ps, id) = scalar_store(0.0);
        let mut state = OptimState::default();
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let g = Tensor::from_vec(Shape::matrix(1, 1), vec![1.0]).unwrap();
        adam_step(&mut ps, &[(id, g)], &mut state, &cfg, 1e-3).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((ps.value(id).data()[0] - expect).abs() < 1e-9);
    }

    #[test]
    fn hundred_steps_minimize_quadratic() {
        // f(θ) = θ², ∇f = 2θ, from θ = 1
        let (mut ps, id) = scalar_store(1.0);
        let mut state = OptimState::default();
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..100 {
            let theta = ps.value(id).data()[0];
            let g = Tensor::from_vec(Shape::matrix(1, 1), vec![2.0 * theta]).unwrap();
            adam_step(&mut ps, &[(id, g)], &mut state, &cfg, 0.05).unwrap();
        }
        assert!(ps.value(id).data()[0].abs() < 0.1, "theta = {}", ps.value(id).data()[0]);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let (mut ps, id) = scalar_store(1.0);
        let mut state = OptimState::default();
        let g = Tensor::from_vec(Shape::matrix(1, 1), vec![f64::NAN]).unwrap();
        let err = adam_step(&mut ps, &[(id, g)], &mut state, &OptimConfig::default(), 1e-3)
            .unwrap_err();
        assert!(err.to_string().contains("theta"), "{err}");
    }
}
