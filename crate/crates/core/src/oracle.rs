//! Naive reference implementations used by the verification suite. Nothing
//! here is called from a production path: these exist so the optimized
//! kernels can be checked against independently written loops, and they stay
//! deliberately slow and literal.

use crate::ops::attention::AttnGeom;
use crate::ops::pool::PoolMode;
use crate::tensor::{Shape, Tensor};

/// Plain nested-loop cross-correlation with zero padding and groups.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    groups: usize,
) -> Tensor<f64> {
    let (n, c_in, h, wd) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let (c_out, _cg, kh, kw) = (w.shape().n(), w.shape().c(), w.shape().h(), w.shape().w());
    let h_out = (h + 2 * pad_h - kh) / stride + 1;
    let w_out = (wd + 2 * pad_w - kw) / stride + 1;
    let cin_g = c_in / groups;
    let cout_g = c_out / groups;
    Tensor::from_fn(Shape::nchw(n, c_out, h_out, w_out), |ni, oc, oy, ox| {
        let grp = oc / cout_g;
        let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
        for icg in 0..cin_g {
            let ic = grp * cin_g + icg;
            for kr in 0..kh {
                for kc in 0..kw {
                    let iy = (oy * stride + kr) as isize - pad_h as isize;
                    let ix = (ox * stride + kc) as isize - pad_w as isize;
                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    acc += x.at(ni, ic, iy as usize, ix as usize) * w.at(oc, icg, kr, kc);
                }
            }
        }
        acc
    })
}

/// Sliding-window pooling by direct scan.
pub fn naive_pool2d(
    x: &Tensor<f64>,
    window: usize,
    stride: usize,
    pad: usize,
    mode: PoolMode,
) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape().n(), x.shape().c(), x.shape().h(), x.shape().w());
    let h_out = (h + 2 * pad - window) / stride + 1;
    let w_out = (w + 2 * pad - window) / stride + 1;
    Tensor::from_fn(Shape::nchw(n, c, h_out, w_out), |ni, ci, oy, ox| {
        let mut acc: Option<f64> = None;
        let mut sum = 0.0;
        let mut count = 0usize;
        for dy in 0..window {
            for dx in 0..window {
                let iy = (oy * stride + dy) as isize - pad as isize;
                let ix = (ox * stride + dx) as isize - pad as isize;
                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                    continue;
                }
                let v = x.at(ni, ci, iy as usize, ix as usize);
                sum += v;
                count += 1;
                acc = Some(match acc {
                    Some(a) => a.max(v),
                    None => v,
                });
            }
        }
        match mode {
            PoolMode::Max => acc.expect("window never fully out of bounds"),
            PoolMode::Avg => sum / count as f64,
        }
    })
}

/// Triple-loop matrix product on (1,1,r,c) views.
pub fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (m, k) = (a.shape().h(), a.shape().w());
    let n = b.shape().w();
    Tensor::from_fn(Shape::matrix(m, n), |_, _, r, c| {
        let mut acc = 0.0;
        for p in 0..k {
            acc += a.at(0, 0, r, p) * b.at(0, 0, p, c);
        }
        acc
    })
}

pub fn naive_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-head attention by explicit scalar loops; also reports the q·kᵀ
/// multiply-add count, so it doubles as the unreduced-MSA cost baseline.
pub fn naive_attention(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    bias: &Tensor<f64>,
    geom: &AttnGeom,
) -> (Tensor<f64>, u64) {
    let n = q.shape().n();
    let d = q.shape().c();
    let (heads, dh) = (geom.heads, geom.d_head);
    let (n_q, n_kv) = (geom.n_q(), geom.n_kv());
    let (_bh, bw) = geom.bias_bins;
    let cs = geom.center_stride as isize;
    let row_off = geom.bias_center.0 as isize;
    let col_off = geom.bias_center.1 as isize;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = vec![0.0; n * d * n_q];
    let mut macs = 0u64;
    for ni in 0..n {
        for hi in 0..heads {
            for t in 0..n_q {
                let (qr, qc) = ((t / geom.w_q) as isize, (t % geom.w_q) as isize);
                let mut scores = vec![f64::NEG_INFINITY; n_kv];
                for u in 0..n_kv {
                    let (kr, kc) = ((u / geom.w_kv) as isize, (u % geom.w_kv) as isize);
                    let (dr, dc) = (qr - cs * kr, qc - cs * kc);
                    if let Some(win) = geom.window {
                        if dr.unsigned_abs() >= win || dc.unsigned_abs() >= win {
                            continue;
                        }
                    }
                    let mut dot = 0.0;
                    for j in 0..dh {
                        let qv = q.data()[(ni * d + hi * dh + j) * n_q + t];
                        let kv = k.data()[(ni * d + hi * dh + j) * n_kv + u];
                        dot += qv * kv;
                    }
                    macs += dh as u64;
                    let b_idx = (dr + row_off) as usize * bw + (dc + col_off) as usize;
                    scores[u] = dot * scale + bias.data()[hi * bias.shape().h() * bw + b_idx];
                }
                let weights = masked_softmax(&scores);
                for j in 0..dh {
                    let mut acc = 0.0;
                    for (u, &a) in weights.iter().enumerate() {
                        acc += a * v.data()[(ni * d + hi * dh + j) * n_kv + u];
                    }
                    out[(ni * d + hi * dh + j) * n_q + t] = acc;
                }
            }
        }
    }
    (
        Tensor::from_vec(Shape::nchw(n, d, geom.h_q, geom.w_q), out).expect("naive attn shape"),
        macs,
    )
}

fn masked_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() })
        .collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Error function by Taylor series for |x| <= 3 and a continued fraction for
/// the tail. Independent of the statrs-backed production route.
pub fn erf_reference(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_reference(-x);
    }
    if x <= 3.0 {
        // erf(x) = 2/sqrt(pi) * sum_n (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x; // x^(2n+1) (-1)^n / n!
        let mut sum = x;
        let x2 = x * x;
        for n in 1..200 {
            term *= -x2 / n as f64;
            let add = term / (2 * n + 1) as f64;
            sum += add;
            if add.abs() < 1e-18 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        // evaluated bottom-up with a fixed depth.
        let mut f = x;
        for k in (1..=60).rev() {
            f = x + (k as f64 / 2.0) / f;
        }
        1.0 - (-x * x).exp() / std::f64::consts::PI.sqrt() / f
    }
}

/// GELU via the reference erf: x * Phi(x).
pub fn gelu_reference(x: f64) -> f64 {
    x * 0.5 * (1.0 + erf_reference(x / std::f64::consts::SQRT_2))
}

/// Independent confusion-matrix tally.
pub fn tally_confusion(preds: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in preds.iter().zip(labels.iter()) {
        m[t][p] += 1;
    }
    m
}

/// ROC-AUC as the Mann-Whitney U statistic / (n_pos * n_neg), counting ties
/// as 1/2.
pub fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut u = 0.0;
    for (&si, &pi) in scores.iter().zip(positive.iter()) {
        if !pi {
            continue;
        }
        for (&sj, &pj) in scores.iter().zip(positive.iter()) {
            if pj {
                continue;
            }
            if si > sj {
                u += 1.0;
            } else if si == sj {
                u += 0.5;
            }
        }
    }
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Full symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// (eigenvalues, eigenvectors as rows), sorted by descending eigenvalue.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-30 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (aip, aiq) = (a[i][p], a[i][q]);
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let (apj, aqj) = (a[p][j], a[q][j]);
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let (vip, viq) = (v[i][p], v[i][q]);
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let eigvals: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let eigvecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|r| v[r][col]).collect())
        .collect();
    (eigvals, eigvecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_erf_agrees_with_production_erf() {
        // two independent routes to the same special function; the library
        // route is good to ~1e-10, the series to ~1e-15
        for &x in &[-4.5, -2.0, -0.7, 0.0, 0.3, 1.0, 2.5, 3.5, 5.0] {
            let ours = erf_reference(x);
            let prod = statrs::function::erf::erf(x);
            assert!((ours - prod).abs() < 1e-9, "erf({x}): {ours} vs {prod}");
        }
    }

    #[test]
    fn jacobi_recovers_diagonal() {
        let m = vec![vec![3.0, 0.0], vec![0.0, 1.0]];
        let (vals, vecs) = jacobi_eigen(&m);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[0][0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mann_whitney_on_separated_scores_is_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let pos = [true, true, false, false];
        assert_eq!(mann_whitney_auc(&scores, &pos), Some(1.0));
    }
}
