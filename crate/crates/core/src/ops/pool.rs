//! Spatial pooling: windowed max/average, global average, and adaptive
//! average (used to align auxiliary maps onto the backbone grid).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// Window pooling configuration. `pad` extends the spec's (window, stride,
/// mode) triple: shape-preserving fusion stages need window 3 / stride 1 /
/// pad 1. Padded cells never win a max and are excluded from the average
/// divisor, so interior windows keep the exact 1/w² mean and a constant
/// input pools to that constant everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolCfg {
    pub window: usize,
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    pub mode: PoolMode,
}

impl PoolCfg {
    pub fn new(window: usize, stride: usize, mode: PoolMode) -> Self {
        PoolCfg {
            window,
            stride,
            pad: 0,
            mode,
        }
    }

    pub fn with_pad(window: usize, stride: usize, pad: usize, mode: PoolMode) -> Self {
        PoolCfg {
            window,
            stride,
            pad,
            mode,
        }
    }

    fn validate(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("pool window and stride must be >= 1".into()));
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if self.window > ph || self.window > pw {
            return Err(Error::dim_ctx(
                "pool window",
                ph.min(pw),
                self.window,
                "window larger than (padded) input",
            ));
        }
        Ok(((ph - self.window) / self.stride + 1, (pw - self.window) / self.stride + 1))
    }
}

/// Data the backward pass needs: winning input index per output element for
/// max mode, in-bounds cell count per output element for avg mode.
#[derive(Debug)]
pub enum PoolSaved {
    MaxIndices(Vec<u32>),
    AvgCounts(Vec<u32>),
}

pub fn pool2d<T: Scalar>(x: &Tensor<T>, cfg: &PoolCfg) -> Result<(Tensor<T>, PoolSaved)> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let (h_out, w_out) = cfg.validate(h, w)?;
    let mut out = vec![T::ZERO; n * c * h_out * w_out];
    let mut saved = match cfg.mode {
        PoolMode::Max => PoolSaved::MaxIndices(vec![0; out.len()]),
        PoolMode::Avg => PoolSaved::AvgCounts(vec![0; out.len()]),
    };
    let data = x.data();
    for nc in 0..n * c {
        let plane = &data[nc * h * w..(nc + 1) * h * w];
        let out_plane = &mut out[nc * h_out * w_out..(nc + 1) * h_out * w_out];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let y0 = (oy * cfg.stride) as isize - cfg.pad as isize;
                let x0 = (ox * cfg.stride) as isize - cfg.pad as isize;
                match (&mut saved, cfg.mode) {
                    (PoolSaved::MaxIndices(idx), PoolMode::Max) => {
                        let mut best = T::from_f64(f64::NEG_INFINITY);
                        let mut best_i = 0usize;
                        for dy in 0..cfg.window {
                            let iy = y0 + dy as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..cfg.window {
                                let ix = x0 + dx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let i = iy as usize * w + ix as usize;
                                if plane[i] > best {
                                    best = plane[i];
                                    best_i = i;
                                }
                            }
                        }
                        out_plane[oy * w_out + ox] = best;
                        idx[nc * h_out * w_out + oy * w_out + ox] = best_i as u32;
                    }
                    (PoolSaved::AvgCounts(cnt), PoolMode::Avg) => {
                        let mut acc = T::ZERO;
                        let mut count = 0u32;
                        for dy in 0..cfg.window {
                            let iy = y0 + dy as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..cfg.window {
                                let ix = x0 + dx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += plane[iy as usize * w + ix as usize];
                                count += 1;
                            }
                        }
                        out_plane[oy * w_out + ox] = acc / lit::<T>(count as f64);
                        cnt[nc * h_out * w_out + oy * w_out + ox] = count;
                    }
                    _ => unreachable!(),
                }
            }
        }
    }
    Ok((Tensor::from_vec(Shape::nchw(n, c, h_out, w_out), out)?, saved))
}

pub fn pool2d_backward<T: Scalar>(
    x_shape: Shape,
    cfg: &PoolCfg,
    saved: &PoolSaved,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = (x_shape.n(), x_shape.c(), x_shape.h(), x_shape.w());
    let (h_out, w_out) = (grad_out.shape().h(), grad_out.shape().w());
    let mut gx = vec![T::ZERO; x_shape.len()];
    let go = grad_out.data();
    for nc in 0..n * c {
        let g_plane = &mut gx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let oi = nc * h_out * w_out + oy * w_out + ox;
                match saved {
                    PoolSaved::MaxIndices(idx) => {
                        g_plane[idx[oi] as usize] += go[oi];
                    }
                    PoolSaved::AvgCounts(cnt) => {
                        let share = go[oi] / lit::<T>(cnt[oi] as f64);
                        let y0 = (oy * cfg.stride) as isize - cfg.pad as isize;
                        let x0 = (ox * cfg.stride) as isize - cfg.pad as isize;
                        for dy in 0..cfg.window {
                            let iy = y0 + dy as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for dx in 0..cfg.window {
                                let ix = x0 + dx as isize;
                                if ix >= 0 && ix < w as isize {
                                    g_plane[iy as usize * w + ix as usize] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Shrink each feature map to its spatial mean: (N,C,H,W) -> (N,C,1,1).
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let inv = T::ONE / lit::<T>((h * w) as f64);
    let mut out = Vec::with_capacity(n * c);
    for nc in 0..n * c {
        let mut acc = T::ZERO;
        for &v in &x.data()[nc * h * w..(nc + 1) * h * w] {
            acc += v;
        }
        out.push(acc * inv);
    }
    Tensor::from_vec(Shape::nchw(n, c, 1, 1), out).expect("gap shape")
}

pub fn global_avg_pool_backward<T: Scalar>(x_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x_shape.h(), x_shape.w());
    let inv = T::ONE / lit::<T>((h * w) as f64);
    let mut gx = vec![T::ZERO; x_shape.len()];
    for nc in 0..x_shape.n() * x_shape.c() {
        let share = grad_out.data()[nc] * inv;
        gx[nc * h * w..(nc + 1) * h * w].fill(share);
    }
    Tensor::from_vec(x_shape, gx).expect("gap grad shape")
}

fn adaptive_span(i: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let lo = i * in_dim / out_dim;
    let hi = ((i + 1) * in_dim).div_ceil(out_dim);
    (lo, hi)
}

/// Average-pool to an exact output grid; regions follow the usual
/// floor/ceil split so they tile the input.
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    if oh == 0 || ow == 0 || oh > h || ow > w {
        return Err(Error::dim_ctx("adaptive pool target", h.min(w), oh.max(ow), "target must be within input dims"));
    }
    let mut out = vec![T::ZERO; n * c * oh * ow];
    for nc in 0..n * c {
        let plane = &x.data()[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_span(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_span(ox, w, ow);
                let mut acc = T::ZERO;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        acc += plane[iy * w + ix];
                    }
                }
                out[nc * oh * ow + oy * ow + ox] =
                    acc / lit::<T>(((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Tensor::from_vec(Shape::nchw(n, c, oh, ow), out)
}

pub fn adaptive_avg_pool_backward<T: Scalar>(
    x_shape: Shape,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let (h, w) = (x_shape.h(), x_shape.w());
    let (oh, ow) = (grad_out.shape().h(), grad_out.shape().w());
    let mut gx = vec![T::ZERO; x_shape.len()];
    for nc in 0..x_shape.n() * x_shape.c() {
        let g_plane = &mut gx[nc * h * w..(nc + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = adaptive_span(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1) = adaptive_span(ox, w, ow);
                let share = grad_out.data()[nc * oh * ow + oy * ow + ox]
                    / lit::<T>(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        g_plane[iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, gx).expect("adaptive grad shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2x2() -> Tensor<f64> {
        Tensor::from_vec(Shape::nchw(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn max_window_two() {
        let (y, _) = pool2d(&t2x2(), &PoolCfg::new(2, 2, PoolMode::Max)).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn avg_window_two() {
        let (y, _) = pool2d(&t2x2(), &PoolCfg::new(2, 2, PoolMode::Avg)).unwrap();
        assert_eq!(y.data(), &[2.5]);
    }

    #[test]
    fn window_larger_than_input_errors() {
        let err = pool2d(&t2x2(), &PoolCfg::new(3, 1, PoolMode::Max)).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn avg_of_constant_is_constant_even_with_pad() {
        let x = Tensor::<f64>::filled(Shape::nchw(1, 1, 5, 5), 3.25);
        let (y, _) = pool2d(&x, &PoolCfg::with_pad(3, 1, 1, PoolMode::Avg)).unwrap();
        assert_eq!(y.shape(), Shape::nchw(1, 1, 5, 5));
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn gap_of_quad_is_mean() {
        let y = global_avg_pool(&t2x2());
        assert_eq!(y.shape(), Shape::nchw(1, 1, 1, 1));
        assert_eq!(y.data()[0], 2.5);
    }

    #[test]
    fn adaptive_pool_identity_when_same_size() {
        let x = t2x2();
        let y = adaptive_avg_pool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
