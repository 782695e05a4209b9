//! Structural and broadcast ops: channel concat/slice, elementwise add,
//! scaling, channel/pixel gating, channel reductions, dropout.

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

/// Concatenate along the channel axis; all inputs must share N, H, W.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
    let (n, h, w) = (first.shape().n(), first.shape().h(), first.shape().w());
    let mut c_total = 0;
    for x in xs {
        if x.shape().n() != n {
            return Err(Error::dim("batch", n, x.shape().n()));
        }
        if x.shape().h() != h {
            return Err(Error::dim("height", h, x.shape().h()));
        }
        if x.shape().w() != w {
            return Err(Error::dim("width", w, x.shape().w()));
        }
        c_total += x.shape().c();
    }
    let plane = h * w;
    let mut out = vec![T::ZERO; n * c_total * plane];
    for ni in 0..n {
        let mut c_off = 0;
        for x in xs {
            let c = x.shape().c();
            let src = &x.data()[ni * c * plane..(ni + 1) * c * plane];
            out[(ni * c_total + c_off) * plane..(ni * c_total + c_off + c) * plane]
                .copy_from_slice(src);
            c_off += c;
        }
    }
    Tensor::from_vec(Shape::nchw(n, c_total, h, w), out)
}

/// Split a concat gradient back into per-input gradients.
pub fn concat_channels_backward<T: Scalar>(
    shapes: &[Shape],
    grad_out: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let n = grad_out.shape().n();
    let c_total = grad_out.shape().c();
    let plane = grad_out.shape().h() * grad_out.shape().w();
    let mut grads: Vec<Vec<T>> = shapes.iter().map(|s| vec![T::ZERO; s.len()]).collect();
    for ni in 0..n {
        let mut c_off = 0;
        for (gi, s) in shapes.iter().enumerate() {
            let c = s.c();
            let src = &grad_out.data()
                [(ni * c_total + c_off) * plane..(ni * c_total + c_off + c) * plane];
            grads[gi][ni * c * plane..(ni + 1) * c * plane].copy_from_slice(src);
            c_off += c;
        }
    }
    grads
        .into_iter()
        .zip(shapes.iter())
        .map(|(g, &s)| Tensor::from_vec(s, g).expect("concat grad shape"))
        .collect()
}

/// Copy out the channel band [from, to).
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if from >= to || to > c {
        return Err(Error::dim_ctx("channel band", c, to, "slice range out of bounds"));
    }
    let plane = h * w;
    let cs = to - from;
    let mut out = vec![T::ZERO; n * cs * plane];
    for ni in 0..n {
        out[ni * cs * plane..(ni + 1) * cs * plane].copy_from_slice(
            &x.data()[(ni * c + from) * plane..(ni * c + to) * plane],
        );
    }
    Tensor::from_vec(Shape::nchw(n, cs, h, w), out)
}

pub fn slice_channels_backward<T: Scalar>(
    x_shape: Shape,
    from: usize,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (n, c) = (x_shape.n(), x_shape.c());
    let plane = x_shape.h() * x_shape.w();
    let cs = grad_out.shape().c();
    let mut gx = vec![T::ZERO; x_shape.len()];
    for ni in 0..n {
        gx[(ni * c + from) * plane..(ni * c + from + cs) * plane]
            .copy_from_slice(&grad_out.data()[ni * cs * plane..(ni + 1) * cs * plane]);
    }
    Tensor::from_vec(x_shape, gx).expect("slice grad shape")
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::dim_ctx("add operand length", a.len(), b.len(), "shapes must match"));
    }
    let out: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), out)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, factor: T) -> Tensor<T> {
    x.map(|v| v * factor)
}

/// x (N,C,H,W) * gate (N,C,1,1), broadcast over the spatial plane.
pub fn mul_channel_gate<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if gate.shape() != Shape::nchw(n, c, 1, 1) {
        return Err(Error::dim_ctx("gate channels", c, gate.shape().c(), "channel gate must be (N,C,1,1)"));
    }
    let plane = h * w;
    let mut out = vec![T::ZERO; x.len()];
    for nc in 0..n * c {
        let g = gate.data()[nc];
        for i in 0..plane {
            out[nc * plane + i] = x.data()[nc * plane + i] * g;
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn mul_channel_gate_backward<T: Scalar>(
    x: &Tensor<T>,
    gate: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, c) = (x.shape().n(), x.shape().c());
    let plane = x.shape().h() * x.shape().w();
    let mut gx = vec![T::ZERO; x.len()];
    let mut gg = vec![T::ZERO; gate.len()];
    for nc in 0..n * c {
        let g = gate.data()[nc];
        let mut acc = T::ZERO;
        for i in 0..plane {
            let go = grad_out.data()[nc * plane + i];
            gx[nc * plane + i] = go * g;
            acc += go * x.data()[nc * plane + i];
        }
        gg[nc] = acc;
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("gate gx"),
        Tensor::from_vec(gate.shape(), gg).expect("gate gg"),
    )
}

/// x (N,C,H,W) * gate (N,1,H,W), broadcast over channels.
pub fn mul_pixel_gate<T: Scalar>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if gate.shape() != Shape::nchw(n, 1, h, w) {
        return Err(Error::dim_ctx("gate plane", h * w, gate.shape().h() * gate.shape().w(), "pixel gate must be (N,1,H,W)"));
    }
    let plane = h * w;
    let mut out = vec![T::ZERO; x.len()];
    for ni in 0..n {
        let g_plane = &gate.data()[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                out[base + i] = x.data()[base + i] * g_plane[i];
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub fn mul_pixel_gate_backward<T: Scalar>(
    x: &Tensor<T>,
    gate: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (n, c) = (x.shape().n(), x.shape().c());
    let plane = x.shape().h() * x.shape().w();
    let mut gx = vec![T::ZERO; x.len()];
    let mut gg = vec![T::ZERO; gate.len()];
    for ni in 0..n {
        let g_plane = &gate.data()[ni * plane..(ni + 1) * plane];
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                let go = grad_out.data()[base + i];
                gx[base + i] = go * g_plane[i];
                gg[ni * plane + i] += go * x.data()[base + i];
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).expect("pixel gx"),
        Tensor::from_vec(gate.shape(), gg).expect("pixel gg"),
    )
}

/// Mean over channels: (N,C,H,W) -> (N,1,H,W).
pub fn channel_mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let plane = h * w;
    let inv = T::ONE / lit::<T>(c as f64);
    let mut out = vec![T::ZERO; n * plane];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                out[ni * plane + i] += x.data()[base + i];
            }
        }
        for i in 0..plane {
            out[ni * plane + i] *= inv;
        }
    }
    Tensor::from_vec(Shape::nchw(n, 1, h, w), out).expect("channel mean shape")
}

pub fn channel_mean_backward<T: Scalar>(x_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c) = (x_shape.n(), x_shape.c());
    let plane = x_shape.h() * x_shape.w();
    let inv = T::ONE / lit::<T>(c as f64);
    let mut gx = vec![T::ZERO; x_shape.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            for i in 0..plane {
                gx[base + i] = grad_out.data()[ni * plane + i] * inv;
            }
        }
    }
    Tensor::from_vec(x_shape, gx).expect("channel mean grad")
}

/// Max over channels: (N,C,H,W) -> (N,1,H,W); winning channel saved.
pub fn channel_max<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let plane = h * w;
    let mut out = vec![T::ZERO; n * plane];
    let mut arg = vec![0u32; n * plane];
    for ni in 0..n {
        for i in 0..plane {
            let mut best = x.data()[(ni * c) * plane + i];
            let mut best_c = 0u32;
            for ci in 1..c {
                let v = x.data()[(ni * c + ci) * plane + i];
                if v > best {
                    best = v;
                    best_c = ci as u32;
                }
            }
            out[ni * plane + i] = best;
            arg[ni * plane + i] = best_c;
        }
    }
    (
        Tensor::from_vec(Shape::nchw(n, 1, h, w), out).expect("channel max shape"),
        arg,
    )
}

pub fn channel_max_backward<T: Scalar>(
    x_shape: Shape,
    arg: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (n, c) = (x_shape.n(), x_shape.c());
    let plane = x_shape.h() * x_shape.w();
    let mut gx = vec![T::ZERO; x_shape.len()];
    for ni in 0..n {
        for i in 0..plane {
            let ci = arg[ni * plane + i] as usize;
            gx[(ni * c + ci) * plane + i] = grad_out.data()[ni * plane + i];
        }
    }
    Tensor::from_vec(x_shape, gx).expect("channel max grad")
}

/// Inverted dropout: keep with probability 1-p and scale kept values by
/// 1/(1-p). The mask is produced by the caller so the graph owns the RNG.
pub fn dropout_apply<T: Scalar>(x: &Tensor<T>, mask: &[bool], p: f64) -> Tensor<T> {
    let keep_scale = lit::<T>(1.0 / (1.0 - p));
    let out: Vec<T> = x
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&v, &keep)| if keep { v * keep_scale } else { T::ZERO })
        .collect();
    Tensor::from_vec(x.shape(), out).expect("dropout shape")
}

pub fn dropout_backward<T: Scalar>(
    x_shape: Shape,
    mask: &[bool],
    p: f64,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let keep_scale = lit::<T>(1.0 / (1.0 - p));
    let gx: Vec<T> = grad_out
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&g, &keep)| if keep { g * keep_scale } else { T::ZERO })
        .collect();
    Tensor::from_vec(x_shape, gx).expect("dropout grad shape")
}

/// Weighted scalar reduction sum(x * r); the probe `r` is a constant. Used
/// to turn arbitrary outputs into a scalar for gradient checking.
pub fn dot_const<T: Scalar>(x: &Tensor<T>, r: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != r.shape() {
        return Err(Error::dim("dot operand length", x.len(), r.len()));
    }
    let mut acc = T::ZERO;
    for (&a, &b) in x.data().iter().zip(r.data().iter()) {
        acc += a * b;
    }
    Tensor::from_vec(Shape::matrix(1, 1), vec![acc])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_slice_is_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = Tensor::<f64>::from_fn(Shape::nchw(1, 2, 4, 4), |_, _, _, _| rng.gen());
        let b = Tensor::<f64>::from_fn(Shape::nchw(1, 3, 4, 4), |_, _, _, _| rng.gen());
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), Shape::nchw(1, 5, 4, 4));
        let a2 = slice_channels(&cat, 0, 2).unwrap();
        let b2 = slice_channels(&cat, 2, 5).unwrap();
        assert_eq!(a.data(), a2.data());
        assert_eq!(b.data(), b2.data());
    }

    #[test]
    fn concat_of_one_is_identity() {
        let a = Tensor::<f64>::filled(Shape::nchw(2, 3, 2, 2), 1.25);
        let cat = concat_channels(&[&a]).unwrap();
        assert_eq!(cat.shape(), a.shape());
        assert_eq!(cat.data(), a.data());
    }

    #[test]
    fn concat_spatial_mismatch_errors() {
        let a = Tensor::<f64>::zeros(Shape::nchw(1, 1, 4, 4));
        let b = Tensor::<f64>::zeros(Shape::nchw(1, 1, 2, 2));
        assert!(concat_channels(&[&a, &b]).is_err());
    }
}
