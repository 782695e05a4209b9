//! Named trainable parameters with their Adam moment buffers.

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// One named tensor plus its first/second Adam moments. Running statistics
/// (batch-norm means/vars) are stored here too with `trainable = false`, so
/// they ride along in checkpoints but are never touched by the optimizer.
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub trainable: bool,
}

pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        value: Tensor<T>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        let len = value.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            m: vec![T::ZERO; len],
            v: vec![T::ZERO; len],
            trainable,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) {
        debug_assert_eq!(value.shape(), self.params[id.0].value.shape());
        self.params[id.0].value = value;
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    /// Total number of scalar values across all entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.register(p.name.clone(), p.value.cast::<U>(), p.trainable)
                .expect("names unique by construction");
        }
        out
    }
}

/// Draw from N(0, std²) via Box-Muller; deterministic under the seeded RNG.
pub fn normal_sample<T: Scalar>(rng: &mut ChaCha8Rng, std: f64) -> T {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    lit::<T>((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos() * std)
}

/// Kaiming fan-in scaled normal init: std = sqrt(2 / fan_in).
pub fn kaiming_normal<T: Scalar>(shape: Shape, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.len() {
        data.push(normal_sample::<T>(rng, std));
    }
    Tensor::from_vec(shape, data).expect("kaiming shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut ps = ParamStore::<f32>::new();
        ps.register("w", Tensor::zeros(Shape::matrix(1, 1)), true).unwrap();
        assert!(ps.register("w", Tensor::zeros(Shape::matrix(1, 1)), true).is_err());
    }

    #[test]
    fn moments_start_at_zero() {
        let mut ps = ParamStore::<f32>::new();
        let id = ps
            .register("w", Tensor::filled(Shape::matrix(2, 2), 1.0), true)
            .unwrap();
        assert!(ps.get(id).m.iter().all(|&x| x == 0.0));
        assert!(ps.get(id).v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kaiming_std_tracks_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = kaiming_normal::<f64>(Shape::nchw(64, 32, 3, 3), 32 * 9, &mut rng);
        let mean: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let var: f64 = t.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / t.len() as f64;
        let expect = 2.0 / (32.0 * 9.0);
        assert!((var - expect).abs() < expect * 0.2, "var {var} vs {expect}");
    }
}
