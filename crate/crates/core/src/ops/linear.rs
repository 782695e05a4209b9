//! Matrix product over tensors viewed as matrices (shape (1, 1, rows, cols)).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

fn as_matrix<T: Scalar>(t: &Tensor<T>, what: &'static str) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.n() != 1 || s.c() != 1 {
        return Err(Error::dim_ctx("matrix batch dims", 1, s.n().max(s.c()), what));
    }
    Ok((s.h(), s.w()))
}

/// Row-major GEMM on raw slices: out (m x n) = a (m x k) * b (k x n).
pub fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    out.fill(T::ZERO);
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

/// out (m x n) += a^T? No transposes here; callers lay data out explicitly.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka) = as_matrix(a, "matmul lhs")?;
    let (kb, n) = as_matrix(b, "matmul rhs")?;
    if ka != kb {
        return Err(Error::dim_ctx("inner dimension", ka, kb, "matmul"));
    }
    let mut out = vec![T::ZERO; m * n];
    gemm(a.data(), b.data(), m, ka, n, &mut out);
    Tensor::from_vec(Shape::matrix(m, n), out)
}

/// Gradients of c = a*b: da = g * b^T, db = a^T * g.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape().h(), a.shape().w());
    let n = b.shape().w();
    let g = grad_out.data();
    let mut da = vec![T::ZERO; m * k];
    for r in 0..m {
        let g_row = &g[r * n..(r + 1) * n];
        let da_row = &mut da[r * k..(r + 1) * k];
        for p in 0..k {
            let b_row = &b.data()[p * n..(p + 1) * n];
            let mut acc = T::ZERO;
            for (&gv, &bv) in g_row.iter().zip(b_row.iter()) {
                acc += gv * bv;
            }
            da_row[p] = acc;
        }
    }
    let mut db = vec![T::ZERO; k * n];
    for p in 0..k {
        let db_row = &mut db[p * n..(p + 1) * n];
        for r in 0..m {
            let av = a.data()[r * k + p];
            if av == T::ZERO {
                continue;
            }
            let g_row = &g[r * n..(r + 1) * n];
            for (d, &gv) in db_row.iter_mut().zip(g_row.iter()) {
                *d += av * gv;
            }
        }
    }
    (
        Tensor::from_vec(a.shape(), da).expect("matmul da"),
        Tensor::from_vec(b.shape(), db).expect("matmul db"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let i2 = Tensor::<f64>::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::<f64>::matrix(2, 2, vec![3.0, -1.0, 2.5, 4.0]).unwrap();
        let y = matmul(&i2, &a).unwrap();
        assert_eq!(y.data(), a.data());
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::<f64>::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let y = matmul(&a, &b).unwrap();
        assert_eq!(y.data(), &[11.0]);
    }

    #[test]
    fn inner_dim_mismatch_errors() {
        let a = Tensor::<f64>::matrix(1, 3, vec![0.0; 3]).unwrap();
        let b = Tensor::<f64>::matrix(2, 1, vec![0.0; 2]).unwrap();
        assert!(matmul(&a, &b).is_err());
    }
}
