//! Symmetric positive-definite solves and singular value decomposition.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

/// Solves `A x = b` for symmetric positive-definite `A` via Cholesky.
pub fn solve_spd(a: &Matrix, b: &Vector) -> Result<Vector> {
    Cholesky::new(a)?.solve(b)
}

/// Cholesky factor of a symmetric positive-definite matrix, reusable across
/// many right-hand sides.
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape("cholesky needs a square matrix".into()));
        }
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = a.get(i, j);
                for k in 0..j {
                    acc -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if acc <= 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "matrix not positive definite (pivot {acc} at {i})"
                        )));
                    }
                    l.set(i, j, acc.sqrt());
                } else {
                    l.set(i, j, acc / l.get(j, j));
                }
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        let n = self.l.rows();
        if b.len() != n {
            return Err(Error::Shape("cholesky solve right-hand side length".into()));
        }
        // Forward substitution L y = b.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.l.get(i, j) * y[j];
            }
            y[i] = acc / self.l.get(i, i);
        }
        // Back substitution Lᵀ x = y.
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in i + 1..n {
                acc -= self.l.get(j, i) * x[j];
            }
            x[i] = acc / self.l.get(i, i);
        }
        Vector::from_vec(x)
    }
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ`.
///
/// `u` is `m×r`, `v` is `n×r`, `r = min(m, n)`; singular values descend.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

/// One-sided Jacobi SVD. Robust and deterministic at desk scale; quadratic
/// in the smaller dimension per sweep.
pub fn svd(a: &Matrix) -> Svd {
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose());
        Svd { u: t.v, singular_values: t.singular_values, v: t.u }
    }
}

fn svd_tall(a: &Matrix) -> Svd {
    let m = a.rows();
    let n = a.cols();
    // Work on columns: b[j] is the j-th column of the evolving matrix.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.get(i, j)).collect()).collect();
    let mut v = Matrix::identity(n);

    let eps = 1e-14;
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                let (alpha, beta, gamma) = col_moments(&b[i], &b[j]);
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma.abs() <= eps * scale {
                    continue;
                }
                off = off.max(gamma.abs() / scale);
                // Jacobi rotation zeroing the (i, j) inner product.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut b, i, j, c, s);
                for r in 0..n {
                    let vi = v.get(r, i);
                    let vj = v.get(r, j);
                    v.set(r, i, c * vi - s * vj);
                    v.set(r, j, s * vi + c * vj);
                }
            }
        }
        if off <= eps {
            break;
        }
    }

    let mut sigma: Vec<f64> = b
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    // Sort descending, permuting U and V columns alike.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap());

    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let mut sigma_sorted = vec![0.0; n];
    for (dst, &src) in order.iter().enumerate() {
        sigma_sorted[dst] = sigma[src];
        let norm = if sigma[src] > 0.0 { sigma[src] } else { 1.0 };
        for r in 0..m {
            u.set(r, dst, b[src][r] / norm);
        }
        for r in 0..n {
            v_sorted.set(r, dst, v.get(r, src));
        }
    }
    sigma.clear();

    Svd { u, singular_values: sigma_sorted, v: v_sorted }
}

fn col_moments(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (a, b) in x.iter().zip(y) {
        alpha += a * a;
        beta += b * b;
        gamma += a * b;
    }
    (alpha, beta, gamma)
}

fn rotate_pair(b: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let m = b[i].len();
    for r in 0..m {
        let bi = b[i][r];
        let bj = b[j][r];
        b[i][r] = c * bi - s * bj;
        b[j][r] = s * bi + c * bj;
    }
}
