//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM,
//! with strides, zero padding and channel groups (depthwise = groups = C).

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvCfg {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub groups: usize,
}

impl ConvCfg {
    pub fn new(stride: usize, pad: usize) -> Self {
        ConvCfg {
            stride,
            pad_h: pad,
            pad_w: pad,
            groups: 1,
        }
    }

    pub fn grouped(stride: usize, pad: usize, groups: usize) -> Self {
        ConvCfg {
            stride,
            pad_h: pad,
            pad_w: pad,
            groups,
        }
    }
}

/// Validated geometry for one convolution call.
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub groups: usize,
    /// im2col rows per group: (c_in/groups) * kh * kw
    pub k_per_group: usize,
}

pub(crate) fn conv_geometry<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    cfg: &ConvCfg,
) -> Result<ConvGeom> {
    let (n, c_in, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let (c_out, wc, kh, kw) = (
        weight.shape().n(),
        weight.shape().c(),
        weight.shape().h(),
        weight.shape().w(),
    );
    if cfg.groups == 0 || c_in % cfg.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} does not divide input channels {c_in}",
            cfg.groups
        )));
    }
    if c_out % cfg.groups != 0 {
        return Err(Error::Config(format!(
            "groups {} does not divide output channels {c_out}",
            cfg.groups
        )));
    }
    if wc != c_in / cfg.groups {
        return Err(Error::dim_ctx(
            "kernel input channels",
            c_in / cfg.groups,
            wc,
            "kernel shape must be (C_out, C_in/groups, kh, kw)",
        ));
    }
    if cfg.stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let padded_h = h + 2 * cfg.pad_h;
    let padded_w = w + 2 * cfg.pad_w;
    if kh > padded_h {
        return Err(Error::dim_ctx("kernel height", padded_h, kh, "exceeds padded input"));
    }
    if kw > padded_w {
        return Err(Error::dim_ctx("kernel width", padded_w, kw, "exceeds padded input"));
    }
    let h_out = (padded_h - kh) / cfg.stride + 1;
    let w_out = (padded_w - kw) / cfg.stride + 1;
    Ok(ConvGeom {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
        groups: cfg.groups,
        k_per_group: (c_in / cfg.groups) * kh * kw,
    })
}

/// Unfold one image (c_in, h, w) into the column matrix, rows = c_in*kh*kw,
/// cols = h_out*w_out. Out-of-bounds taps read as zero.
fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cfg: &ConvCfg, col: &mut [T]) {
    let cols = g.h_out * g.w_out;
    for ic in 0..g.c_in {
        let img_c = &img[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for kr in 0..g.kh {
            for kc in 0..g.kw {
                let row = (ic * g.kh + kr) * g.kw + kc;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * cfg.stride + kr) as isize - cfg.pad_h as isize;
                    let dst = &mut out_row[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &img_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * cfg.stride + kc) as isize - cfg.pad_w as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-matrix gradient back onto the image gradient.
fn col2im_add<T: Scalar>(col: &[T], g: &ConvGeom, cfg: &ConvCfg, img_grad: &mut [T]) {
    let cols = g.h_out * g.w_out;
    for ic in 0..g.c_in {
        let img_c = &mut img_grad[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for kr in 0..g.kh {
            for kc in 0..g.kw {
                let row = (ic * g.kh + kr) * g.kw + kc;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.h_out {
                    let iy = (oy * cfg.stride + kr) as isize - cfg.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut img_c[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * cfg.stride + kc) as isize - cfg.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// out[r, :] += sum_p a[r, p] * b[p, :], r in 0..m, for row-major slices.
fn gemm_accumulate<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let out_row = &mut out[r * n..(r + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::ZERO {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

/// Forward convolution. `bias`, when present, must hold `C_out` values.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cfg: &ConvCfg,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, weight, cfg)?;
    if let Some(b) = bias {
        if b.len() != g.c_out {
            return Err(Error::dim("bias channels", g.c_out, b.len()));
        }
    }
    let cols = g.h_out * g.w_out;
    let out_per_n = g.c_out * cols;
    let mut out = vec![T::ZERO; g.n * out_per_n];
    let in_per_n = g.c_in * g.h * g.w;
    let xdata = x.data();
    let wdata = weight.data();
    let c_out_g = g.c_out / g.groups;

    for_each_chunk_mut(&mut out, out_per_n, |ni, out_n| {
        let img = &xdata[ni * in_per_n..(ni + 1) * in_per_n];
        let mut col = vec![T::ZERO; g.c_in * g.kh * g.kw * cols];
        im2col(img, &g, cfg, &mut col);
        if let Some(b) = bias {
            for oc in 0..g.c_out {
                out_n[oc * cols..(oc + 1) * cols].fill(b.data()[oc]);
            }
        }
        for grp in 0..g.groups {
            let w_grp = &wdata[grp * c_out_g * g.k_per_group..(grp + 1) * c_out_g * g.k_per_group];
            let col_grp = &col[grp * g.k_per_group * cols..(grp + 1) * g.k_per_group * cols];
            let out_grp = &mut out_n[grp * c_out_g * cols..(grp + 1) * c_out_g * cols];
            gemm_accumulate(w_grp, col_grp, c_out_g, g.k_per_group, cols, out_grp);
        }
    });

    Tensor::from_vec(Shape::nchw(g.n, g.c_out, g.h_out, g.w_out), out)
}

pub struct ConvGrads<T> {
    /// Absent when the caller marked the input as not needing a gradient
    /// (e.g. the raw image leaf).
    pub x: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass. Recomputes the column matrices rather than caching them.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    need_x: bool,
    cfg: &ConvCfg,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(x, weight, cfg)?;
    let cols = g.h_out * g.w_out;
    let out_per_n = g.c_out * cols;
    let in_per_n = g.c_in * g.h * g.w;
    let c_out_g = g.c_out / g.groups;
    let xdata = x.data();
    let wdata = weight.data();
    let go = grad_out.data();

    let mut gx = if need_x { vec![T::ZERO; xdata.len()] } else { Vec::new() };
    let mut gw = vec![T::ZERO; wdata.len()];
    let mut gb = if has_bias { Some(vec![T::ZERO; g.c_out]) } else { None };

    // Input gradient: independent per batch item.
    if need_x {
        for_each_chunk_mut(&mut gx, in_per_n, |ni, gx_n| {
            let go_n = &go[ni * out_per_n..(ni + 1) * out_per_n];
            let mut col_grad = vec![T::ZERO; g.c_in * g.kh * g.kw * cols];
            for grp in 0..g.groups {
                let w_grp =
                    &wdata[grp * c_out_g * g.k_per_group..(grp + 1) * c_out_g * g.k_per_group];
                let cg_grp =
                    &mut col_grad[grp * g.k_per_group * cols..(grp + 1) * g.k_per_group * cols];
                // col_grad[p, :] += w[r, p] * go[r, :]
                for r in 0..c_out_g {
                    let go_row = &go_n[(grp * c_out_g + r) * cols..(grp * c_out_g + r + 1) * cols];
                    let w_row = &w_grp[r * g.k_per_group..(r + 1) * g.k_per_group];
                    for (p, &wv) in w_row.iter().enumerate() {
                        if wv == T::ZERO {
                            continue;
                        }
                        let dst = &mut cg_grp[p * cols..(p + 1) * cols];
                        for (d, &s) in dst.iter_mut().zip(go_row.iter()) {
                            *d += wv * s;
                        }
                    }
                }
            }
            col2im_add(&col_grad, &g, cfg, gx_n);
        });
    }

    // Weight/bias gradients: sequential over the batch so accumulation order
    // is fixed; parallel over kernel rows inside.
    let mut col = vec![T::ZERO; g.c_in * g.kh * g.kw * cols];
    for ni in 0..g.n {
        let img = &xdata[ni * in_per_n..(ni + 1) * in_per_n];
        im2col(img, &g, cfg, &mut col);
        let go_n = &go[ni * out_per_n..(ni + 1) * out_per_n];
        let col_ref = &col;
        for_each_chunk_mut(&mut gw, g.k_per_group, |oc, gw_row| {
            let grp = oc / c_out_g;
            let go_row = &go_n[oc * cols..(oc + 1) * cols];
            let col_grp = &col_ref[grp * g.k_per_group * cols..(grp + 1) * g.k_per_group * cols];
            for (p, gwp) in gw_row.iter_mut().enumerate() {
                let col_row = &col_grp[p * cols..(p + 1) * cols];
                let mut acc = T::ZERO;
                for (&a, &b) in go_row.iter().zip(col_row.iter()) {
                    acc += a * b;
                }
                *gwp += acc;
            }
        });
        if let Some(gb) = gb.as_mut() {
            for oc in 0..g.c_out {
                let mut acc = T::ZERO;
                for &v in &go_n[oc * cols..(oc + 1) * cols] {
                    acc += v;
                }
                gb[oc] += acc;
            }
        }
    }

    Ok(ConvGrads {
        x: if need_x {
            Some(Tensor::from_vec(x.shape(), gx)?)
        } else {
            None
        },
        weight: Tensor::from_vec(weight.shape(), gw)?,
        bias: match gb {
            Some(v) => Some(Tensor::from_vec(Shape::nchw(1, g.c_out, 1, 1), v)?),
            None => None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_3x3_valid_conv_sums_window() {
        let x = Tensor::<f64>::filled(Shape::nchw(1, 1, 3, 3), 1.0);
        let w = Tensor::<f64>::filled(Shape::nchw(1, 1, 3, 3), 1.0);
        let y = conv2d(&x, &w, None, &ConvCfg::new(1, 0)).unwrap();
        assert_eq!(y.shape(), Shape::nchw(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let x = Tensor::<f64>::from_vec(Shape::nchw(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::from_vec(Shape::nchw(1, 1, 1, 1), vec![2.0]).unwrap();
        let y = conv2d(&x, &w, None, &ConvCfg::new(1, 0)).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros(Shape::nchw(1, 3, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::nchw(2, 1, 3, 3));
        let err = conv2d(&x, &w, None, &ConvCfg::grouped(1, 1, 2)).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err:?}");
    }

    #[test]
    fn kernel_channel_mismatch_names_axis() {
        let x = Tensor::<f64>::zeros(Shape::nchw(1, 3, 4, 4));
        let w = Tensor::<f64>::zeros(Shape::nchw(2, 2, 3, 3));
        let err = conv2d(&x, &w, None, &ConvCfg::new(1, 0)).unwrap_err();
        match err {
            Error::Dimension { axis, .. } => assert_eq!(axis, "kernel input channels"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }
}
