//! Scaled dot-product attention over spatial tokens with per-head relative
//! position bias. Queries come from the full-resolution map; keys/values
//! usually come from a stride-2 reduced map, which is what makes the
//! multi-head attention lightweight: the q·kᵀ term costs n·n'·d instead of
//! n²·d. The executed multiply-add count is reported for instrumentation.

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Shape, Tensor};

/// Geometry of one attention call: query grid, key/value grid, head split,
/// how key centers map back onto the query grid, the optional local window
/// restriction, and how (Δrow, Δcol) displacements index the bias table.
#[derive(Clone, Copy, Debug)]
pub struct AttnGeom {
    pub heads: usize,
    pub d_head: usize,
    pub h_q: usize,
    pub w_q: usize,
    pub h_kv: usize,
    pub w_kv: usize,
    /// 2 when k/v were stride-2 reduced, 1 when reduction was skipped.
    pub center_stride: usize,
    /// When set, token t attends key u only if both |Δrow| and |Δcol|
    /// between t and u's center are < window.
    pub window: Option<usize>,
    /// Bias table dims (rows, cols) and the bin index of Δ = 0. A table
    /// sized for resolution R serves any resolution up to R.
    pub bias_bins: (usize, usize),
    pub bias_center: (usize, usize),
}

impl AttnGeom {
    /// Geometry whose bias table exactly fits the current displacement
    /// range: bins = (h_q + cs·(h_kv−1), ...), Δ=0 at (cs·(h_kv−1), ...).
    pub fn infer<T: Scalar>(
        q: &Tensor<T>,
        k: &Tensor<T>,
        heads: usize,
        center_stride: usize,
        window: Option<usize>,
    ) -> Result<Self> {
        let (h_q, w_q) = (q.shape().h(), q.shape().w());
        let (h_kv, w_kv) = (k.shape().h(), k.shape().w());
        let cs = center_stride;
        let bias_bins = (h_q + cs * (h_kv - 1), w_q + cs * (w_kv - 1));
        let bias_center = (cs * (h_kv - 1), cs * (w_kv - 1));
        Self::with_bias_layout(q, k, heads, center_stride, window, bias_bins, bias_center)
    }

    /// Geometry against a caller-owned bias table; validates that every
    /// displacement the (query, key) grids can produce lands inside it.
    pub fn with_bias_layout<T: Scalar>(
        q: &Tensor<T>,
        k: &Tensor<T>,
        heads: usize,
        center_stride: usize,
        window: Option<usize>,
        bias_bins: (usize, usize),
        bias_center: (usize, usize),
    ) -> Result<Self> {
        let d = q.shape().c();
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {d} not divisible by heads {heads}"
            )));
        }
        if let Some(w) = window {
            if w < center_stride {
                return Err(Error::Config(format!(
                    "attention window {w} smaller than reduction stride {center_stride} would mask whole rows"
                )));
            }
        }
        let geom = AttnGeom {
            heads,
            d_head: d / heads,
            h_q: q.shape().h(),
            w_q: q.shape().w(),
            h_kv: k.shape().h(),
            w_kv: k.shape().w(),
            center_stride,
            window,
            bias_bins,
            bias_center,
        };
        let cs = center_stride as isize;
        let (min_dr, max_dr) = (-cs * (geom.h_kv as isize - 1), geom.h_q as isize - 1);
        let (min_dc, max_dc) = (-cs * (geom.w_kv as isize - 1), geom.w_q as isize - 1);
        let (cr, cc) = (bias_center.0 as isize, bias_center.1 as isize);
        if min_dr + cr < 0
            || max_dr + cr >= bias_bins.0 as isize
            || min_dc + cc < 0
            || max_dc + cc >= bias_bins.1 as isize
        {
            return Err(Error::Config(format!(
                "bias table {}x{} (center {:?}) cannot cover displacements rows {min_dr}..={max_dr} cols {min_dc}..={max_dc}",
                bias_bins.0, bias_bins.1, bias_center
            )));
        }
        Ok(geom)
    }

    /// Symmetric layout for a table meant to serve every resolution up to
    /// (h_max, w_max): bins (2h−1, 2w−1) centered at (h−1, w−1).
    pub fn symmetric_bias_layout(h_max: usize, w_max: usize) -> ((usize, usize), (usize, usize)) {
        (
            (2 * h_max - 1, 2 * w_max - 1),
            (h_max - 1, w_max - 1),
        )
    }

    pub fn n_q(&self) -> usize {
        self.h_q * self.w_q
    }

    pub fn n_kv(&self) -> usize {
        self.h_kv * self.w_kv
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::nchw(1, self.heads, self.bias_bins.0, self.bias_bins.1)
    }

    #[inline]
    fn bias_offsets(&self) -> (isize, isize) {
        (self.bias_center.0 as isize, self.bias_center.1 as isize)
    }
}

fn gather_head<T: Scalar>(
    data: &[T],
    n: usize,
    head: usize,
    d: usize,
    d_head: usize,
    plane: usize,
    out: &mut [T],
) {
    // (N, d, h, w) channel-major -> token-major (plane x d_head)
    let base = (n * d + head * d_head) * plane;
    for j in 0..d_head {
        let src = &data[base + j * plane..base + (j + 1) * plane];
        for (t, &v) in src.iter().enumerate() {
            out[t * d_head + j] = v;
        }
    }
}

fn scatter_head_add<T: Scalar>(
    chunk: &mut [T],
    token_major: &[T],
    d_head: usize,
    plane: usize,
) {
    // token-major (plane x d_head) -> channel-major chunk (d_head x plane)
    for t in 0..plane {
        for j in 0..d_head {
            chunk[j * plane + t] += token_major[t * d_head + j];
        }
    }
}

pub struct AttnSaved<T> {
    /// Row-stochastic attention weights, (N * heads) chunks of n_q x n_kv.
    pub weights: Vec<T>,
    pub geom: AttnGeom,
    /// Multiply-adds actually executed by the q·kᵀ stage.
    pub qk_macs: u64,
}

fn validate<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &AttnGeom,
) -> Result<()> {
    if k.shape() != v.shape() {
        return Err(Error::dim_ctx("kv shape", k.len(), v.len(), "key and value must share shape"));
    }
    if k.shape().c() != q.shape().c() {
        return Err(Error::dim("kv channels", q.shape().c(), k.shape().c()));
    }
    if k.shape().n() != q.shape().n() {
        return Err(Error::dim("kv batch", q.shape().n(), k.shape().n()));
    }
    let want = geom.bias_shape();
    if bias.shape() != want {
        return Err(Error::dim_ctx(
            "bias bins",
            want.len(),
            bias.len(),
            format!("bias table must be {want} for this resolution"),
        ));
    }
    Ok(())
}

/// Forward attention. Per head: A = softmax(q·k'ᵀ/sqrt(d_head) + B), out =
/// A·v', heads re-concatenated into the channel axis.
pub fn attention_core<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &AttnGeom,
) -> Result<(Tensor<T>, AttnSaved<T>)> {
    validate(q, k, v, bias, geom)?;
    let n = q.shape().n();
    let d = q.shape().c();
    let (dh, heads) = (geom.d_head, geom.heads);
    let (n_q, n_kv) = (geom.n_q(), geom.n_kv());
    let scale = T::ONE / lit::<T>(dh as f64).sqrt();
    let (bh, bw) = geom.bias_bins;
    let (row_off, col_off) = geom.bias_offsets();
    let cs = geom.center_stride as isize;

    let mut weights = vec![T::ZERO; n * heads * n_q * n_kv];
    let qd = q.data();
    let kd = k.data();

    // Pass 1: scores + softmax into the weights buffer, parallel over (n, head).
    for_each_chunk_mut(&mut weights, n_q * n_kv, |chunk_i, a| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let mut qh = vec![T::ZERO; n_q * dh];
        let mut kh = vec![T::ZERO; n_kv * dh];
        gather_head(qd, ni, hi, d, dh, n_q, &mut qh);
        gather_head(kd, ni, hi, d, dh, n_kv, &mut kh);
        let btab = &bias.data()[hi * bh * bw..(hi + 1) * bh * bw];
        for t in 0..n_q {
            let (qr, qc) = ((t / geom.w_q) as isize, (t % geom.w_q) as isize);
            let q_row = &qh[t * dh..(t + 1) * dh];
            let row = &mut a[t * n_kv..(t + 1) * n_kv];
            let mut max = T::from_f64(f64::NEG_INFINITY);
            for u in 0..n_kv {
                let (kr, kc) = ((u / geom.w_kv) as isize, (u % geom.w_kv) as isize);
                let (dr, dc) = (qr - cs * kr, qc - cs * kc);
                let masked = geom
                    .window
                    .map(|win| dr.unsigned_abs() >= win || dc.unsigned_abs() >= win)
                    .unwrap_or(false);
                if masked {
                    row[u] = T::from_f64(f64::NEG_INFINITY);
                    continue;
                }
                let k_row = &kh[u * dh..(u + 1) * dh];
                let mut dot = T::ZERO;
                for (&a_, &b_) in q_row.iter().zip(k_row.iter()) {
                    dot += a_ * b_;
                }
                let b_idx = (dr + row_off) as usize * bw + (dc + col_off) as usize;
                row[u] = dot * scale + btab[b_idx];
                max = max.max(row[u]);
            }
            let mut sum = T::ZERO;
            for rv in row.iter_mut() {
                if rv.to_f64() == f64::NEG_INFINITY {
                    *rv = T::ZERO;
                } else {
                    *rv = (*rv - max).exp();
                    sum += *rv;
                }
            }
            for rv in row.iter_mut() {
                *rv /= sum;
            }
        }
    });

    // Pass 2: out = A·v per head, parallel over (n, head) output bands.
    let mut out = vec![T::ZERO; n * d * n_q];
    let vd = v.data();
    let wref = &weights;
    for_each_chunk_mut(&mut out, dh * n_q, |chunk_i, out_chunk| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let a = &wref[chunk_i * n_q * n_kv..(chunk_i + 1) * n_q * n_kv];
        let mut vh = vec![T::ZERO; n_kv * dh];
        gather_head(vd, ni, hi, d, dh, n_kv, &mut vh);
        let mut o_t = vec![T::ZERO; dh];
        for t in 0..n_q {
            o_t.fill(T::ZERO);
            let a_row = &a[t * n_kv..(t + 1) * n_kv];
            for (u, &av) in a_row.iter().enumerate() {
                if av == T::ZERO {
                    continue;
                }
                let v_row = &vh[u * dh..(u + 1) * dh];
                for (o, &vv) in o_t.iter_mut().zip(v_row.iter()) {
                    *o += av * vv;
                }
            }
            for j in 0..dh {
                out_chunk[j * n_q + t] = o_t[j];
            }
        }
    });

    let out = Tensor::from_vec(Shape::nchw(n, d, geom.h_q, geom.w_q), out)?;
    let qk_macs = (n * heads * n_q * n_kv * dh) as u64;
    Ok((
        out,
        AttnSaved {
            weights,
            geom: *geom,
            qk_macs,
        },
    ))
}

pub struct AttnGrads<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn attention_core_backward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    bias_shape: Shape,
    saved: &AttnSaved<T>,
    grad_out: &Tensor<T>,
) -> AttnGrads<T> {
    let geom = &saved.geom;
    let n = q.shape().n();
    let d = q.shape().c();
    let (dh, heads) = (geom.d_head, geom.heads);
    let (n_q, n_kv) = (geom.n_q(), geom.n_kv());
    let scale = T::ONE / lit::<T>(dh as f64).sqrt();
    let (bh, bw) = geom.bias_bins;
    let (row_off, col_off) = geom.bias_offsets();
    let cs = geom.center_stride as isize;
    let go = grad_out.data();

    // dS = A ⊙ (dA − rowsum(dA ⊙ A)), dA = dOut·vᵀ
    let mut ds = vec![T::ZERO; n * heads * n_q * n_kv];
    for_each_chunk_mut(&mut ds, n_q * n_kv, |chunk_i, ds_chunk| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let a = &saved.weights[chunk_i * n_q * n_kv..(chunk_i + 1) * n_q * n_kv];
        let mut vh = vec![T::ZERO; n_kv * dh];
        let mut goh = vec![T::ZERO; n_q * dh];
        gather_head(v.data(), ni, hi, d, dh, n_kv, &mut vh);
        gather_head(go, ni, hi, d, dh, n_q, &mut goh);
        for t in 0..n_q {
            let go_row = &goh[t * dh..(t + 1) * dh];
            let a_row = &a[t * n_kv..(t + 1) * n_kv];
            let ds_row = &mut ds_chunk[t * n_kv..(t + 1) * n_kv];
            let mut dot_total = T::ZERO;
            for u in 0..n_kv {
                let v_row = &vh[u * dh..(u + 1) * dh];
                let mut da = T::ZERO;
                for (&g_, &v_) in go_row.iter().zip(v_row.iter()) {
                    da += g_ * v_;
                }
                ds_row[u] = da;
                dot_total += da * a_row[u];
            }
            for u in 0..n_kv {
                ds_row[u] = a_row[u] * (ds_row[u] - dot_total);
            }
        }
    });
    let ds = &ds;

    // dq = dS·k / sqrt(dh)
    let mut gq = vec![T::ZERO; q.len()];
    for_each_chunk_mut(&mut gq, dh * n_q, |chunk_i, gq_chunk| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let ds_c = &ds[chunk_i * n_q * n_kv..(chunk_i + 1) * n_q * n_kv];
        let mut kh = vec![T::ZERO; n_kv * dh];
        gather_head(k.data(), ni, hi, d, dh, n_kv, &mut kh);
        let mut row = vec![T::ZERO; dh];
        for t in 0..n_q {
            row.fill(T::ZERO);
            for (u, &s) in ds_c[t * n_kv..(t + 1) * n_kv].iter().enumerate() {
                if s == T::ZERO {
                    continue;
                }
                let k_row = &kh[u * dh..(u + 1) * dh];
                for (r, &kv_) in row.iter_mut().zip(k_row.iter()) {
                    *r += s * kv_;
                }
            }
            for j in 0..dh {
                gq_chunk[j * n_q + t] = row[j] * scale;
            }
        }
    });

    // dk = dSᵀ·q / sqrt(dh)
    let mut gk = vec![T::ZERO; k.len()];
    for_each_chunk_mut(&mut gk, dh * n_kv, |chunk_i, gk_chunk| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let ds_c = &ds[chunk_i * n_q * n_kv..(chunk_i + 1) * n_q * n_kv];
        let mut qh = vec![T::ZERO; n_q * dh];
        gather_head(q.data(), ni, hi, d, dh, n_q, &mut qh);
        let mut acc = vec![T::ZERO; n_kv * dh];
        for t in 0..n_q {
            let q_row = &qh[t * dh..(t + 1) * dh];
            for (u, &s) in ds_c[t * n_kv..(t + 1) * n_kv].iter().enumerate() {
                if s == T::ZERO {
                    continue;
                }
                let a_row = &mut acc[u * dh..(u + 1) * dh];
                for (r, &qv) in a_row.iter_mut().zip(q_row.iter()) {
                    *r += s * qv;
                }
            }
        }
        for v_ in acc.iter_mut() {
            *v_ *= scale;
        }
        scatter_head_add(gk_chunk, &acc, dh, n_kv);
    });

    // dv = Aᵀ·dOut
    let mut gv = vec![T::ZERO; v.len()];
    for_each_chunk_mut(&mut gv, dh * n_kv, |chunk_i, gv_chunk| {
        let (ni, hi) = (chunk_i / heads, chunk_i % heads);
        let a = &saved.weights[chunk_i * n_q * n_kv..(chunk_i + 1) * n_q * n_kv];
        let mut goh = vec![T::ZERO; n_q * dh];
        gather_head(go, ni, hi, d, dh, n_q, &mut goh);
        let mut acc = vec![T::ZERO; n_kv * dh];
        for t in 0..n_q {
            let go_row = &goh[t * dh..(t + 1) * dh];
            for (u, &av) in a[t * n_kv..(t + 1) * n_kv].iter().enumerate() {
                if av == T::ZERO {
                    continue;
                }
                let a_row = &mut acc[u * dh..(u + 1) * dh];
                for (r, &gv_) in a_row.iter_mut().zip(go_row.iter()) {
                    *r += av * gv_;
                }
            }
        }
        scatter_head_add(gv_chunk, &acc, dh, n_kv);
    });

    // dB: scatter dS into displacement bins, parallel over heads.
    let mut gbias = vec![T::ZERO; bias_shape.len()];
    for_each_chunk_mut(&mut gbias, bh * bw, |hi, gb_head| {
        for ni in 0..n {
            let ds_c = &ds[(ni * heads + hi) * n_q * n_kv..(ni * heads + hi + 1) * n_q * n_kv];
            for t in 0..n_q {
                let (qr, qc) = ((t / geom.w_q) as isize, (t % geom.w_q) as isize);
                for u in 0..n_kv {
                    let (kr, kc) = ((u / geom.w_kv) as isize, (u % geom.w_kv) as isize);
                    let b_idx = (qr - cs * kr + row_off) as usize * bw
                        + (qc - cs * kc + col_off) as usize;
                    gb_head[b_idx] += ds_c[t * n_kv + u];
                }
            }
        }
    });

    AttnGrads {
        q: Tensor::from_vec(q.shape(), gq).expect("attn gq"),
        k: Tensor::from_vec(k.shape(), gk).expect("attn gk"),
        v: Tensor::from_vec(v.shape(), gv).expect("attn gv"),
        bias: Tensor::from_vec(bias_shape, gbias).expect("attn gbias"),
    }
}
