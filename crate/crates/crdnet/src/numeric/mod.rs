//! Dense double-precision linear algebra and verification kernels.
//!
//! Everything here is deterministic: accumulations run in a fixed
//! left-to-right order, so repeated runs produce bit-identical results.

mod svd;

pub use svd::{gram_singular_values, svd_small, Svd};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("dimension mismatch: {left_rows}x{left_cols} * {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { len: usize, rows: usize, cols: usize },
    #[error("matrix is {rows}x{cols}; svd_small accepts at most {max}x{max}")]
    TooLargeForSvd { rows: usize, cols: usize, max: usize },
    #[error("svd did not converge after {sweeps} Jacobi sweeps")]
    SvdNonConvergence { sweeps: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("step size must be positive, got {eps}")]
    BadStep { eps: f64 },
    #[error("non-finite function value at probe entry ({row}, {col})")]
    NonFiniteProbe { row: usize, col: usize },
}

/// Row-major dense matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::BadLength {
                len: data.len(),
                rows,
                cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(NumericError::BadLength {
                    len: row.len(),
                    rows: r,
                    cols: c,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Fills entries from `gen` in row-major order.
    pub fn from_fn(rows: usize, cols: usize, mut gen: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = gen(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Matrix product with fixed left-to-right accumulation over the inner
    /// index, so results are bit-stable across runs and platforms.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.cols != other.rows {
            return Err(NumericError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        let oc = other.cols;
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            let orow = &mut out.data[i * oc..(i + 1) * oc];
            // k ascending keeps each output entry's summation order identical
            // to the naive i-j-k loop.
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &other.data[k * oc..(k + 1) * oc];
                for j in 0..oc {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(out)
    }

    /// `self * other.transpose()` without materializing the transpose.
    /// Output columns are processed in tiles of eight independent
    /// accumulators; each accumulator still sums over ascending k, so every
    /// entry matches the naive dot-product form bit for bit.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.cols != other.cols {
            return Err(NumericError::DimensionMismatch {
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.cols,
                right_cols: other.rows,
            });
        }
        let inner = self.cols;
        let out_cols = other.rows;
        let mut out = Matrix::zeros(self.rows, out_cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = &mut out.data[i * out_cols..(i + 1) * out_cols];
            let mut j = 0;
            while j + 8 <= out_cols {
                let b: [&[f64]; 8] = std::array::from_fn(|t| {
                    &other.data[(j + t) * inner..(j + t + 1) * inner]
                });
                let mut acc = [0.0f64; 8];
                for (k, &a) in arow.iter().enumerate() {
                    for t in 0..8 {
                        acc[t] += a * b[t][k];
                    }
                }
                orow[j..j + 8].copy_from_slice(&acc);
                j += 8;
            }
            while j < out_cols {
                let brow = &other.data[j * inner..(j + 1) * inner];
                let mut acc = 0.0;
                for k in 0..inner {
                    acc += arow[k] * brow[k];
                }
                orow[j] = acc;
                j += 1;
            }
        }
        Ok(out)
    }

    /// `self.transpose() * other` without materializing the transpose.
    pub fn matmul_transpose_a(&self, other: &Matrix) -> Result<Matrix, NumericError> {
        if self.rows != other.rows {
            return Err(NumericError::DimensionMismatch {
                left_rows: self.cols,
                left_cols: self.rows,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        let oc = other.cols;
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = other.row(k);
            for i in 0..self.cols {
                let aki = arow[i];
                let orow = &mut out.data[i * oc..(i + 1) * oc];
                for j in 0..oc {
                    orow[j] += aki * brow[j];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense rank-3 tensor indexed as (time, freq, channel), time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub time: usize,
    pub freq: usize,
    pub channels: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(time: usize, freq: usize, channels: usize) -> Self {
        Tensor3 {
            time,
            freq,
            channels,
            data: vec![0.0; time * freq * channels],
        }
    }

    #[inline]
    pub fn at(&self, t: usize, f: usize, c: usize) -> f64 {
        self.data[(t * self.freq + f) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, t: usize, f: usize, c: usize) -> &mut f64 {
        &mut self.data[(t * self.freq + f) * self.channels + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Numerically stable log-softmax: `x - max(x) - ln(sum(exp(x - max(x))))`.
pub fn stable_log_softmax(logits: &[f64]) -> Result<Vec<f64>, NumericError> {
    if logits.is_empty() {
        return Err(NumericError::EmptyInput);
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for &x in logits {
        sum += (x - max).exp();
    }
    let log_z = sum.ln();
    Ok(logits.iter().map(|&x| x - max - log_z).collect())
}

/// `ln(exp(a) + exp(b))` with negative-infinity inputs handled exactly.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Central-difference gradient estimate of a scalar function, one probe pair
/// per matrix entry.
pub fn finite_diff_grad(
    f: impl Fn(&Matrix) -> f64,
    x: &Matrix,
    eps: f64,
) -> Result<Matrix, NumericError> {
    if !(eps > 0.0) {
        return Err(NumericError::BadStep { eps });
    }
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = probe.get(r, c);
            probe.set(r, c, orig + eps);
            let plus = f(&probe);
            probe.set(r, c, orig - eps);
            let minus = f(&probe);
            probe.set(r, c, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericError::NonFiniteProbe { row: r, col: c });
            }
            grad.set(r, c, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(grad)
}

/// Relative error with an absolute floor, the usual gradient-check metric.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    /// Independent triple-loop product used as the matmul oracle.
    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let product = Matrix::identity(2).matmul(&a).unwrap();
        assert_eq!(product, a);
    }

    #[test]
    fn matmul_hand_computed() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 7, 5);
        let b = random_matrix(&mut rng, 5, 3);
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        assert!(fast.max_abs_diff(&slow) <= 1e-12);
    }

    #[test]
    fn matmul_dimension_mismatch_reports_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("4x2"), "{msg}");
    }

    #[test]
    fn matmul_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 4, 3);
            let b = random_matrix(&mut rng, 3, 5);
            let c = random_matrix(&mut rng, 5, 2);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            assert!(left.max_abs_diff(&right) <= 1e-10);
        }
    }

    #[test]
    fn transpose_variants_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 6, 4);
        let b = random_matrix(&mut rng, 5, 4);
        let via_helper = a.matmul_transpose_b(&b).unwrap();
        let via_transpose = a.matmul(&b.transpose()).unwrap();
        assert!(via_helper.max_abs_diff(&via_transpose) <= 1e-12);

        let c = random_matrix(&mut rng, 6, 3);
        let via_helper = a.matmul_transpose_a(&c).unwrap();
        let via_transpose = a.transpose().matmul(&c).unwrap();
        assert!(via_helper.max_abs_diff(&via_transpose) <= 1e-12);
    }

    #[test]
    fn log_softmax_symmetric_pair() {
        let out = stable_log_softmax(&[0.0, 0.0]).unwrap();
        let expected = -(2.0f64).ln();
        assert!((out[0] - expected).abs() < 1e-15);
        assert!((out[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_survives_large_logits() {
        let out = stable_log_softmax(&[1000.0, 0.0]).unwrap();
        assert!(out[0] > -1e-12 && out[0] <= 0.0);
        assert!((out[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let out = stable_log_softmax(&logits).unwrap();
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn log_softmax_rejects_empty() {
        assert!(matches!(
            stable_log_softmax(&[]),
            Err(NumericError::EmptyInput)
        ));
    }

    #[test]
    fn finite_diff_quadratic() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let grad = finite_diff_grad(
            |m| m.data().iter().map(|v| v * v).sum(),
            &x,
            1e-5,
        )
        .unwrap();
        assert!((grad.get(0, 0) - 2.0).abs() < 1e-8);
        assert!((grad.get(0, 1) - 4.0).abs() < 1e-8);
    }

    #[test]
    fn finite_diff_linear_projection() {
        let x = Matrix::from_rows(&[vec![0.3, -1.2], vec![0.9, 2.0]]).unwrap();
        let grad = finite_diff_grad(|m| m.get(0, 0), &x, 1e-5).unwrap();
        assert!((grad.get(0, 0) - 1.0).abs() < 1e-9);
        assert_eq!(grad.get(0, 1), 0.0);
        assert_eq!(grad.get(1, 0), 0.0);
        assert_eq!(grad.get(1, 1), 0.0);
    }

    #[test]
    fn finite_diff_flags_non_finite_probe() {
        let x = Matrix::from_rows(&[vec![0.5, 1.0]]).unwrap();
        let err = finite_diff_grad(
            |m| if m.get(0, 1) > 1.0 { f64::NAN } else { 1.0 },
            &x,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, NumericError::NonFiniteProbe { row: 0, col: 1 }));
    }

    #[test]
    fn log_add_handles_neg_infinity() {
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, -3.0), -3.0);
        let v = log_add((0.3f64).ln(), (0.7f64).ln());
        assert!((v - 0.0f64).abs() < 1e-12);
    }
}
