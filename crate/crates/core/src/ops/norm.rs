//! Normalization layers: batch normalization over (N,H,W) per channel and
//! layer normalization over channels per spatial token.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

fn check_affine<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != c {
        return Err(Error::dim("gamma channels", c, gamma.len()));
    }
    if beta.len() != c {
        return Err(Error::dim("beta channels", c, beta.len()));
    }
    Ok(())
}

pub struct BnSaved<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>, // per channel
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Training-mode batch norm: statistics from the mini-batch. Errors when the
/// per-channel reduction has fewer than 2 elements (variance degenerate),
/// which covers the N=1, H=W=1 case.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    check_affine(c, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::Config(format!(
            "batch norm in training needs at least 2 values per channel, got N*H*W = {m} (variance degenerate)"
        )));
    }
    let inv_m = T::ONE / lit::<T>(m as f64);
    let mut mean = vec![T::ZERO; c];
    let mut var = vec![T::ZERO; c];
    let plane = h * w;
    for ci in 0..c {
        let mut acc = T::ZERO;
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane] {
                acc += v;
            }
        }
        mean[ci] = acc * inv_m;
        let mut vacc = T::ZERO;
        for ni in 0..n {
            for &v in &x.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane] {
                let d = v - mean[ci];
                vacc += d * d;
            }
        }
        var[ci] = vacc * inv_m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + lit::<T>(eps)).sqrt()).collect();
    let mut x_hat = vec![T::ZERO; x.len()];
    let mut y = vec![T::ZERO; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let (mu, is) = (mean[ci], inv_std[ci]);
            let (g, b) = (gamma.data()[ci], beta.data()[ci]);
            for i in 0..plane {
                let xh = (x.data()[base + i] - mu) * is;
                x_hat[base + i] = xh;
                y[base + i] = g * xh + b;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), y)?,
        BnSaved {
            x_hat,
            inv_std,
            mean,
            var,
        },
    ))
}

pub fn batch_norm_train_backward<T: Scalar>(
    x_shape: Shape,
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (x_shape.n(), x_shape.c(), x_shape.h(), x_shape.w());
    let plane = h * w;
    let m = lit::<T>((n * plane) as f64);
    let go = grad_out.data();
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for ci in 0..c {
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                dgamma[ci] += go[base + i] * saved.x_hat[base + i];
                dbeta[ci] += go[base + i];
            }
        }
    }
    let mut gx = vec![T::ZERO; x_shape.len()];
    for ci in 0..c {
        let coeff = gamma.data()[ci] * saved.inv_std[ci];
        let mean_dy = dbeta[ci] / m;
        let mean_dyxh = dgamma[ci] / m;
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                gx[base + i] =
                    coeff * (go[base + i] - mean_dy - saved.x_hat[base + i] * mean_dyxh);
            }
        }
    }
    (
        Tensor::from_vec(x_shape, gx).expect("bn gx"),
        Tensor::from_vec(gamma.shape(), dgamma).expect("bn dgamma"),
        Tensor::from_vec(gamma.shape(), dbeta).expect("bn dbeta"),
    )
}

/// Inference-mode batch norm using running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let c = x.shape().c();
    check_affine(c, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::dim("running stats channels", c, running_mean.len()));
    }
    let plane = x.shape().h() * x.shape().w();
    let n = x.shape().n();
    let mut y = vec![T::ZERO; x.len()];
    for ci in 0..c {
        let is = T::ONE / (running_var.data()[ci] + lit::<T>(eps)).sqrt();
        let mu = running_mean.data()[ci];
        let (g, b) = (gamma.data()[ci], beta.data()[ci]);
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                y[base + i] = g * (x.data()[base + i] - mu) * is + b;
            }
        }
    }
    Tensor::from_vec(x.shape(), y)
}

/// Backward of eval-mode batch norm (running stats are constants).
pub fn batch_norm_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c) = (x.shape().n(), x.shape().c());
    let plane = x.shape().h() * x.shape().w();
    let go = grad_out.data();
    let mut gx = vec![T::ZERO; x.len()];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for ci in 0..c {
        let is = T::ONE / (running_var.data()[ci] + lit::<T>(eps)).sqrt();
        let mu = running_mean.data()[ci];
        let g = gamma.data()[ci];
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                let xh = (x.data()[base + i] - mu) * is;
                dgamma[ci] += go[base + i] * xh;
                dbeta[ci] += go[base + i];
                gx[base + i] = go[base + i] * g * is;
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("bn eval gx"),
        Tensor::from_vec(gamma.shape(), dgamma).expect("bn eval dgamma"),
        Tensor::from_vec(gamma.shape(), dbeta).expect("bn eval dbeta"),
    )
}

pub struct LnSaved<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>, // per token (n, h, w)
}

/// Layer norm across the channel axis at every spatial position.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LnSaved<T>)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    check_affine(c, gamma, beta)?;
    let plane = h * w;
    let inv_c = T::ONE / lit::<T>(c as f64);
    let mut y = vec![T::ZERO; x.len()];
    let mut x_hat = vec![T::ZERO; x.len()];
    let mut inv_std = vec![T::ZERO; n * plane];
    for ni in 0..n {
        for t in 0..plane {
            let mut mu = T::ZERO;
            for ci in 0..c {
                mu += x.data()[(ni * c + ci) * plane + t];
            }
            mu *= inv_c;
            let mut var = T::ZERO;
            for ci in 0..c {
                let d = x.data()[(ni * c + ci) * plane + t] - mu;
                var += d * d;
            }
            var *= inv_c;
            let is = T::ONE / (var + lit::<T>(eps)).sqrt();
            inv_std[ni * plane + t] = is;
            for ci in 0..c {
                let i = (ni * c + ci) * plane + t;
                let xh = (x.data()[i] - mu) * is;
                x_hat[i] = xh;
                y[i] = gamma.data()[ci] * xh + beta.data()[ci];
            }
        }
    }
    Ok((Tensor::from_vec(x.shape(), y)?, LnSaved { x_hat, inv_std }))
}

pub fn layer_norm_backward<T: Scalar>(
    x_shape: Shape,
    gamma: &Tensor<T>,
    saved: &LnSaved<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = (x_shape.n(), x_shape.c(), x_shape.h(), x_shape.w());
    let plane = h * w;
    let inv_c = T::ONE / lit::<T>(c as f64);
    let go = grad_out.data();
    let mut gx = vec![T::ZERO; x_shape.len()];
    let mut dgamma = vec![T::ZERO; c];
    let mut dbeta = vec![T::ZERO; c];
    for ni in 0..n {
        for t in 0..plane {
            let is = saved.inv_std[ni * plane + t];
            let mut mean_g = T::ZERO;
            let mut mean_gxh = T::ZERO;
            for ci in 0..c {
                let i = (ni * c + ci) * plane + t;
                let g = go[i] * gamma.data()[ci];
                mean_g += g;
                mean_gxh += g * saved.x_hat[i];
                dgamma[ci] += go[i] * saved.x_hat[i];
                dbeta[ci] += go[i];
            }
            mean_g *= inv_c;
            mean_gxh *= inv_c;
            for ci in 0..c {
                let i = (ni * c + ci) * plane + t;
                let g = go[i] * gamma.data()[ci];
                gx[i] = is * (g - mean_g - saved.x_hat[i] * mean_gxh);
            }
        }
    }
    (
        Tensor::from_vec(x_shape, gx).expect("ln gx"),
        Tensor::from_vec(gamma.shape(), dgamma).expect("ln dgamma"),
        Tensor::from_vec(gamma.shape(), dbeta).expect("ln dbeta"),
    )
}
