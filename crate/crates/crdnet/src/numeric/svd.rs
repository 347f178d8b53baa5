//! Small dense SVD via cyclic one-sided Jacobi.
//!
//! Intended for coefficient matrices no larger than 64x64. The rotation
//! schedule is a fixed cyclic sweep over column pairs, so the factorization
//! is deterministic.

use super::{Matrix, NumericError};

pub const MAX_SVD_DIM: usize = 64;
const MAX_SWEEPS: usize = 60;

/// Thin singular value decomposition `a = u * diag(s) * v^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Nonnegative, sorted descending.
    pub singular_values: Vec<f64>,
    /// rows(a) x min-dim, orthonormal columns.
    pub u: Matrix,
    /// cols(a) x min-dim, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let mut scaled = self.u.clone();
        for i in 0..scaled.rows() {
            for j in 0..k {
                let v = scaled.get(i, j) * self.singular_values[j];
                scaled.set(i, j, v);
            }
        }
        scaled.matmul_transpose_b(&self.v).expect("shape fixed by construction")
    }
}

pub fn svd_small(a: &Matrix) -> Result<Svd, NumericError> {
    if a.rows() > MAX_SVD_DIM || a.cols() > MAX_SVD_DIM {
        return Err(NumericError::TooLargeForSvd {
            rows: a.rows(),
            cols: a.cols(),
            max: MAX_SVD_DIM,
        });
    }
    // One-sided Jacobi wants at least as many rows as columns; work on the
    // transpose otherwise and swap the factors at the end.
    if a.rows() >= a.cols() {
        jacobi_tall(a)
    } else {
        let svd = jacobi_tall(&a.transpose())?;
        Ok(Svd {
            singular_values: svd.singular_values,
            u: svd.v,
            v: svd.u,
        })
    }
}

fn jacobi_tall(a: &Matrix) -> Result<Svd, NumericError> {
    let m = a.rows();
    let n = a.cols();
    let mut b = a.clone();
    let mut v = Matrix::identity(n);
    if n == 0 {
        return Ok(Svd {
            singular_values: vec![],
            u: Matrix::zeros(m, 0),
            v,
        });
    }

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    app += bp * bp;
                    aqq += bq * bq;
                    apq += bp * bq;
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                // Rotation zeroing the (p,q) Gram entry.
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b.get(i, p);
                    let bq = b.get(i, q);
                    b.set(i, p, c * bp - s * bq);
                    b.set(i, q, s * bp + c * bq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(NumericError::SvdNonConvergence { sweeps: MAX_SWEEPS });
    }

    let mut norms: Vec<f64> = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..m {
                let x = b.get(i, j);
                acc += x * x;
            }
            acc.sqrt()
        })
        .collect();

    // Sort singular values descending; stable order for ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("norms are finite").then(i.cmp(&j)));
    norms = order.iter().map(|&j| norms[j]).collect();

    let mut u = Matrix::zeros(m, n);
    let mut v_sorted = Matrix::zeros(n, n);
    let tiny = norms.first().copied().unwrap_or(0.0) * 1e-13;
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            v_sorted.set(i, dst, v.get(i, src));
        }
        if norms[dst] > tiny && norms[dst] > 0.0 {
            for i in 0..m {
                u.set(i, dst, b.get(i, src) / norms[dst]);
            }
        }
    }
    for (j, norm) in norms.iter_mut().enumerate() {
        if *norm <= tiny {
            *norm = 0.0;
            fill_orthonormal_column(&mut u, j);
        }
    }

    Ok(Svd {
        singular_values: norms,
        u,
        v: v_sorted,
    })
}

/// Completes column `col` of `u` to an orthonormal basis: take the first
/// standard basis vector that survives Gram-Schmidt against earlier columns.
fn fill_orthonormal_column(u: &mut Matrix, col: usize) {
    let m = u.rows();
    for candidate in 0..m {
        let mut vec = vec![0.0; m];
        vec[candidate] = 1.0;
        // Two passes of Gram-Schmidt keep the result orthogonal to 1e-14.
        for _ in 0..2 {
            for j in 0..col {
                let mut dot = 0.0;
                for i in 0..m {
                    dot += vec[i] * u.get(i, j);
                }
                for (i, vi) in vec.iter_mut().enumerate() {
                    *vi -= dot * u.get(i, j);
                }
            }
        }
        let norm = vec.iter().fold(0.0, |a, x| a + x * x).sqrt();
        if norm > 0.5 {
            for (i, vi) in vec.iter().enumerate() {
                u.set(i, col, vi / norm);
            }
            return;
        }
    }
}

/// Singular values of `a` obtained from the eigenvalues of the Gram matrix
/// `a^T a` by cyclic Jacobi diagonalization. Used as the fallback route when
/// the one-sided iteration does not converge.
pub fn gram_singular_values(a: &Matrix) -> Result<Vec<f64>, NumericError> {
    if a.rows() > MAX_SVD_DIM || a.cols() > MAX_SVD_DIM {
        return Err(NumericError::TooLargeForSvd {
            rows: a.rows(),
            cols: a.cols(),
            max: MAX_SVD_DIM,
        });
    }
    let gram = if a.rows() >= a.cols() {
        a.matmul_transpose_a(a)?
    } else {
        a.matmul_transpose_b(a)?
    };
    let mut eigs = jacobi_eigenvalues_symmetric(&gram);
    for e in &mut eigs {
        *e = e.max(0.0).sqrt();
    }
    eigs.sort_by(|x, y| y.partial_cmp(x).expect("eigenvalues are finite"));
    Ok(eigs)
}

fn jacobi_eigenvalues_symmetric(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut w = a.clone();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += w.get(p, q).abs();
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let apq = w.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = w.get(p, p);
                let aqq = w.get(q, q);
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let wkp = w.get(k, p);
                    let wkq = w.get(k, q);
                    w.set(k, p, c * wkp - s * wkq);
                    w.set(k, q, s * wkp + c * wkq);
                }
                for k in 0..n {
                    let wpk = w.get(p, k);
                    let wqk = w.get(q, k);
                    w.set(p, k, c * wpk - s * wqk);
                    w.set(q, k, s * wpk + c * wqk);
                }
            }
        }
    }
    (0..n).map(|i| w.get(i, i)).collect()
}
