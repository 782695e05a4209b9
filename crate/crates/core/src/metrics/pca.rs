//! Principal component analysis of feature embeddings via power iteration
//! with deflation on the covariance matrix. The verification suite checks
//! this against a full Jacobi eigensolve, so the two routes stay
//! independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PcaResult {
    /// n rows of k projected coordinates.
    pub projections: Vec<Vec<f64>>,
    /// k principal directions (rows, unit length, mutually orthogonal).
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance each component explains, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
}

/// Project mean-centered `features` (n × d) onto the top-k principal
/// directions by descending eigenvalue. Sign convention: the largest-
/// magnitude loading of each component is positive. Zero-variance data
/// projects to all zeros with zero ratios.
pub fn pca_project(features: &[Vec<f64>], k: usize) -> Result<PcaResult> {
    let n = features.len();
    if n == 0 || k == 0 {
        return Err(Error::Config("pca needs n >= k >= 1".into()));
    }
    let d = features[0].len();
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::Config("pca rows must share a dimension".into()));
    }
    if k > d || k > n {
        return Err(Error::Config(format!(
            "pca k={k} exceeds data dims (n={n}, d={d})"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for row in features {
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = features
        .iter()
        .map(|row| row.iter().zip(mean.iter()).map(|(&v, &m)| v - m).collect())
        .collect();

    // covariance (biased), d × d
    let mut cov = vec![vec![0.0f64; d]; d];
    for row in &centered {
        for i in 0..d {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += ri * row[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let total_var: f64 = (0..d).map(|i| cov[i][i]).sum();
    if total_var <= 1e-300 {
        return Ok(PcaResult {
            projections: vec![vec![0.0; k]; n],
            components: orthonormal_seed(k, d),
            explained_variance_ratio: vec![0.0; k],
        });
    }

    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    let mut work = cov.clone();
    for comp in 0..k {
        // deterministic start vector, re-orthogonalized against previous
        let mut v: Vec<f64> = (0..d)
            .map(|i| 1.0 + 0.37 * ((i + 1) as f64 * (comp + 1) as f64).sin())
            .collect();
        orthogonalize(&mut v, &components);
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let mut next = mat_vec(&work, &v);
            orthogonalize(&mut next, &components);
            let norm = normalize(&mut next);
            let delta: f64 = next
                .iter()
                .zip(v.iter())
                .map(|(&a, &b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = next;
            lambda = norm;
            if delta < 1e-14 {
                break;
            }
        }
        // fix sign: largest-magnitude loading positive
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[argmax] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        // deflate
        for i in 0..d {
            for j in 0..d {
                work[i][j] -= lambda * v[i] * v[j];
            }
        }
        eigenvalues.push(lambda.max(0.0));
        components.push(v);
    }

    let projections: Vec<Vec<f64>> = centered
        .iter()
        .map(|row| {
            components
                .iter()
                .map(|c| row.iter().zip(c.iter()).map(|(&a, &b)| a * b).sum())
                .collect()
        })
        .collect();

    Ok(PcaResult {
        projections,
        components,
        explained_variance_ratio: eigenvalues.iter().map(|&l| l / total_var).collect(),
    })
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v.iter()).map(|(&a, &b)| a * b).sum())
        .collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|&x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let dot: f64 = v.iter().zip(b.iter()).map(|(&a, &c)| a * c).sum();
        for (x, &c) in v.iter_mut().zip(b.iter()) {
            *x -= dot * c;
        }
    }
}

fn orthonormal_seed(k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_load_on_one_component() {
        let pts: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let t = i as f64 - 4.5;
                vec![2.0 * t, -1.0 * t]
            })
            .collect();
        let r = pca_project(&pts, 1).unwrap();
        assert!((r.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_square_splits_variance_evenly() {
        let pts = vec![
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ];
        let r = pca_project(&pts, 2).unwrap();
        assert!((r.explained_variance_ratio[0] - 0.5).abs() < 1e-9);
        assert!((r.explained_variance_ratio[1] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_projects_to_zero() {
        let pts = vec![vec![3.0, -1.0, 2.0]; 5];
        let r = pca_project(&pts, 2).unwrap();
        assert!(r.projections.iter().flatten().all(|&v| v == 0.0));
        assert!(r.explained_variance_ratio.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn components_are_orthonormal_and_ratios_non_increasing() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let r = pca_project(&pts, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = r.components[i]
                    .iter()
                    .zip(r.components[j].iter())
                    .map(|(&a, &b)| a * b)
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6, "gram[{i}][{j}] = {dot}");
            }
        }
        for w in r.explained_variance_ratio.windows(2) {
            assert!(w[0] >= w[1] - 1e-9);
        }
    }

    #[test]
    fn matches_jacobi_oracle_up_to_sign() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let k = 3;
        let r = pca_project(&pts, k).unwrap();

        // oracle: full Jacobi eigensolve of the same covariance
        let d = 10;
        let n = pts.len() as f64;
        let mut mean = vec![0.0; d];
        for p in &pts {
            for (m, &v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut cov = vec![vec![0.0; d]; d];
        for p in &pts {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
                }
            }
        }
        let (vals, vecs) = crate::oracle::jacobi_eigen(&cov);
        let total: f64 = (0..d).map(|i| cov[i][i]).sum();
        for c in 0..k {
            assert!(
                (r.explained_variance_ratio[c] - vals[c] / total).abs() < 1e-9,
                "ratio {c}"
            );
            let dot: f64 = r.components[c]
                .iter()
                .zip(vecs[c].iter())
                .map(|(&a, &b)| a * b)
                .sum();
            assert!((dot.abs() - 1.0).abs() < 1e-6, "component {c}: |dot| = {}", dot.abs());
        }
    }
}
