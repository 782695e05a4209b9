//! Elementwise activations and the numerically stable softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
}

/// GELU in the exact Gaussian-CDF form, x * Phi(x). The erf route keeps the
/// forward consistent with the finite-difference suite; no tanh shortcut.
fn gelu<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    let inv_sqrt2 = lit::<T>(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (T::ONE + (x * inv_sqrt2).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = lit::<T>(0.5);
    let inv_sqrt2 = lit::<T>(std::f64::consts::FRAC_1_SQRT_2);
    let phi_cdf = half * (T::ONE + (x * inv_sqrt2).erf());
    let pdf = lit::<T>(1.0 / (2.0 * std::f64::consts::PI).sqrt())
        * (-(x * x) * half).exp();
    phi_cdf + x * pdf
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Relu => x.map(|v| v.max(T::ZERO)),
        Activation::Gelu => x.map(gelu),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// d activation / d x, evaluated at the forward input `x`.
pub fn activation_backward<T: Scalar>(
    x: &Tensor<T>,
    kind: Activation,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let gx: Vec<T> = x
        .data()
        .iter()
        .zip(grad_out.data().iter())
        .map(|(&xv, &g)| match kind {
            Activation::Relu => {
                if xv > T::ZERO {
                    g
                } else {
                    T::ZERO
                }
            }
            Activation::Gelu => g * gelu_grad(xv),
            Activation::Sigmoid => {
                let s = sigmoid(xv);
                g * s * (T::ONE - s)
            }
        })
        .collect();
    Tensor::from_vec(x.shape(), gx).expect("activation grad shape")
}

/// Softmax along one of the four axes, computed with max subtraction so that
/// inputs of magnitude 1e3 cannot overflow.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis > 3 {
        return Err(Error::Config(format!("softmax axis {axis} out of range 0..4")));
    }
    let dims = x.shape().0;
    let axis_len = dims[axis];
    let mut out = vec![T::ZERO; x.len()];
    for_each_lane(dims, axis, |lane_base, stride| {
        let mut max = T::from_f64(f64::NEG_INFINITY);
        for i in 0..axis_len {
            max = max.max(x.data()[lane_base + i * stride]);
        }
        let mut sum = T::ZERO;
        for i in 0..axis_len {
            let e = (x.data()[lane_base + i * stride] - max).exp();
            out[lane_base + i * stride] = e;
            sum += e;
        }
        for i in 0..axis_len {
            out[lane_base + i * stride] /= sum;
        }
    });
    Tensor::from_vec(x.shape(), out)
}

pub fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    axis: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let dims = y.shape().0;
    let axis_len = dims[axis];
    let mut gx = vec![T::ZERO; y.len()];
    for_each_lane(dims, axis, |lane_base, stride| {
        let mut dot = T::ZERO;
        for i in 0..axis_len {
            let idx = lane_base + i * stride;
            dot += grad_out.data()[idx] * y.data()[idx];
        }
        for i in 0..axis_len {
            let idx = lane_base + i * stride;
            gx[idx] = y.data()[idx] * (grad_out.data()[idx] - dot);
        }
    });
    Tensor::from_vec(y.shape(), gx).expect("softmax grad shape")
}

/// Visit every 1-D lane along `axis`: calls f(base_offset, stride).
fn for_each_lane(dims: [usize; 4], axis: usize, mut f: impl FnMut(usize, usize)) {
    let strides = [
        dims[1] * dims[2] * dims[3],
        dims[2] * dims[3],
        dims[3],
        1,
    ];
    let mut outer = [0usize; 3];
    let mut outer_dims = [0usize; 3];
    let mut outer_strides = [0usize; 3];
    let mut k = 0;
    for d in 0..4 {
        if d != axis {
            outer_dims[k] = dims[d];
            outer_strides[k] = strides[d];
            k += 1;
        }
    }
    loop {
        let base = outer[0] * outer_strides[0]
            + outer[1] * outer_strides[1]
            + outer[2] * outer_strides[2];
        f(base, strides[axis]);
        // odometer increment over the three outer axes
        let mut d = 2;
        loop {
            outer[d] += 1;
            if outer[d] < outer_dims[d] {
                break;
            }
            outer[d] = 0;
            if d == 0 {
                return;
            }
            d -= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_clamps_negative() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(1, 2), vec![-2.0, 3.0]).unwrap();
        let y = activation(&x, Activation::Relu);
        assert_eq!(y.data(), &[0.0, 3.0]);
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let x = Tensor::<f64>::zeros(Shape::matrix(1, 1));
        let y = activation(&x, Activation::Sigmoid);
        assert_eq!(y.data()[0], 0.5);
    }

    #[test]
    fn gelu_matches_gaussian_cdf_value() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(1, 1), vec![1.0]).unwrap();
        let y = activation(&x, Activation::Gelu);
        assert!((y.data()[0] - 0.8413447461).abs() < 1e-9, "got {}", y.data()[0]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(1, 2), vec![0.0, 0.0]).unwrap();
        let y = softmax(&x, 3).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let big = Tensor::<f64>::from_vec(Shape::matrix(1, 2), vec![1000.0, 1000.0]).unwrap();
        let yb = softmax(&big, 3).unwrap();
        assert!((yb.data()[0] - 0.5).abs() < 1e-12);
        assert!(yb.all_finite());
    }

    #[test]
    fn softmax_known_triple() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let y = softmax(&x, 3).unwrap();
        let expect = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (a, b) in y.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_on_channel_axis() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::from_fn(Shape::nchw(2, 5, 3, 3), |_, _, _, _| {
            rng.gen_range(-1000.0..1000.0)
        });
        let y = softmax(&x, 1).unwrap();
        for n in 0..2 {
            for h in 0..3 {
                for w in 0..3 {
                    let s: f64 = (0..5).map(|c| y.at(n, c, h, w)).sum();
                    assert!((s - 1.0).abs() <= 1e-6);
                }
            }
        }
    }
}
