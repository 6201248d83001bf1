//! Dense row-major matrices and the handful of kernels the solvers need.
//!
//! Products go through `matrixmultiply`'s blocked GEMM; factorizations
//! (Householder QR, Cholesky) are implemented here.

use std::fmt;
use std::ops::Index;

use crate::error::{Error, Result};

/// Relative pivot threshold below which a triangular factor is treated as
/// rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, rejecting empty shapes,
    /// length mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for kernels whose output is finite by construction
    /// or checked by the caller.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::InvalidShape {
                    rows: nrows,
                    cols: ncols,
                    len: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 1.0)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    fn check_same_shape(&self, other: &DenseMatrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &DenseMatrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMatrix> {
        self.check_same_shape(other, op)?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        finite_or(Self::from_raw(self.rows, self.cols, data), op)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Entrywise product.
    pub fn hadamard(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Result<DenseMatrix> {
        let data = self.data.iter().map(|v| v * s).collect();
        finite_or(Self::from_raw(self.rows, self.cols, data), "scale")
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &DenseMatrix) -> Result<f64> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn row_norm(&self, r: usize) -> f64 {
        self.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row_norm(r)).collect()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// Scales every column to unit Euclidean norm.
    pub fn normalize_columns(&self) -> Result<DenseMatrix> {
        let norms = self.column_norms();
        if let Some(c) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::DegenerateColumn(c));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for (v, n) in out.row_mut(r).iter_mut().zip(&norms) {
                *v /= n;
            }
        }
        finite_or(out, "normalize_columns")
    }

    pub fn select_columns(&self, idx: &[usize]) -> Result<DenseMatrix> {
        if idx.is_empty() || idx.iter().any(|&c| c >= self.cols) {
            return Err(Error::InvalidConfig(format!(
                "column selection {idx:?} out of range for {} columns",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(Self::from_raw(self.rows, idx.len(), data))
    }

    /// Builds an `n x cols` matrix whose rows `idx[k]` are row `k` of `self`
    /// and whose other rows are zero.
    pub fn scatter_rows(&self, idx: &[usize], n: usize) -> Result<DenseMatrix> {
        if idx.len() != self.rows || idx.iter().any(|&r| r >= n) {
            return Err(Error::InvalidConfig(format!(
                "row scatter {idx:?} incompatible with {} rows into {n}",
                self.rows
            )));
        }
        let mut out = vec![0.0; n * self.cols];
        for (k, &r) in idx.iter().enumerate() {
            out[r * self.cols..(r + 1) * self.cols].copy_from_slice(self.row(k));
        }
        Ok(Self::from_raw(n, self.cols, out))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

fn finite_or(m: DenseMatrix, op: &'static str) -> Result<DenseMatrix> {
    if m.data.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::NonFinite(op))
    }
}

/// `c = a * b` (or `a^T * b` when `transpose_a`) written into `c`, no checks.
pub(crate) fn gemm_into(a: &DenseMatrix, transpose_a: bool, b: &DenseMatrix, c: &mut [f64]) {
    let (m, k) = if transpose_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = b.cols;
    debug_assert_eq!(k, b.rows);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if transpose_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    // SAFETY: the pointers cover `m*k`, `k*n` and `m*n` elements with the
    // strides given, as guaranteed by the shape checks of the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            b.cols as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = vec![0.0; a.rows * b.cols];
    gemm_into(a, false, b, &mut out);
    finite_or(DenseMatrix::from_raw(a.rows, b.cols, out), "matmul")
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul_tn",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = vec![0.0; a.cols * b.cols];
    gemm_into(a, true, b, &mut out);
    finite_or(DenseMatrix::from_raw(a.cols, b.cols, out), "matmul_tn")
}

pub fn frobenius_norm(m: &DenseMatrix) -> f64 {
    m.frobenius_norm()
}

pub fn hadamard(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    a.hadamard(b)
}

pub fn normalize_columns(m: &DenseMatrix) -> Result<DenseMatrix> {
    m.normalize_columns()
}

/// Householder QR of a tall matrix, kept in factored form.
struct HouseholderQr {
    m: usize,
    n: usize,
    /// Upper-triangular factor, `n x n` row-major.
    r: Vec<f64>,
    /// Reflector `k` acts on rows `k..m`.
    reflectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
}

impl HouseholderQr {
    fn new(a: &DenseMatrix) -> Self {
        let (m, n) = a.shape();
        debug_assert!(m >= n);
        let mut w = a.data.clone();
        let mut reflectors = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        for k in 0..n {
            let norm = (k..m).map(|i| w[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm == 0.0 {
                reflectors.push(vec![0.0; m - k]);
                betas.push(0.0);
                continue;
            }
            let x0 = w[k * n + k];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = (k..m).map(|i| w[i * n + k]).collect();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            let beta = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for j in k + 1..n {
                let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * w[(k + i) * n + j]).sum();
                let s = s * beta;
                for (i, vi) in v.iter().enumerate() {
                    w[(k + i) * n + j] -= s * vi;
                }
            }
            w[k * n + k] = alpha;
            for i in k + 1..m {
                w[i * n + k] = 0.0;
            }
            reflectors.push(v);
            betas.push(beta);
        }
        let mut r = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                r[i * n + j] = w[i * n + j];
            }
        }
        Self {
            m,
            n,
            r,
            reflectors,
            betas,
        }
    }

    fn rank_deficient(&self) -> bool {
        let diag: Vec<f64> = (0..self.n).map(|i| self.r[i * self.n + i].abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        max == 0.0 || diag.iter().any(|&d| d <= RANK_TOL * max)
    }

    fn apply_reflector(&self, k: usize, rhs: &mut [f64], width: usize) {
        let v = &self.reflectors[k];
        let beta = self.betas[k];
        if beta == 0.0 {
            return;
        }
        for c in 0..width {
            let s: f64 = v.iter().enumerate().map(|(i, vi)| vi * rhs[(k + i) * width + c]).sum();
            let s = s * beta;
            for (i, vi) in v.iter().enumerate() {
                rhs[(k + i) * width + c] -= s * vi;
            }
        }
    }

    /// `rhs <- Q^T rhs` for an `m x width` row-major block.
    fn apply_qt(&self, rhs: &mut [f64], width: usize) {
        for k in 0..self.n {
            self.apply_reflector(k, rhs, width);
        }
    }

    /// `rhs <- Q rhs` for an `m x width` row-major block.
    fn apply_q(&self, rhs: &mut [f64], width: usize) {
        for k in (0..self.n).rev() {
            self.apply_reflector(k, rhs, width);
        }
    }

    /// Solves `R x = b` in place on the leading `n` rows of `b`.
    fn back_substitute(&self, b: &mut [f64], width: usize) {
        let n = self.n;
        for c in 0..width {
            for i in (0..n).rev() {
                let mut s = b[i * width + c];
                for j in i + 1..n {
                    s -= self.r[i * n + j] * b[j * width + c];
                }
                b[i * width + c] = s / self.r[i * n + i];
            }
        }
    }

    /// Solves `R^T x = b` in place on the leading `n` rows of `b`.
    fn forward_substitute_transposed(&self, b: &mut [f64], width: usize) {
        let n = self.n;
        for c in 0..width {
            for i in 0..n {
                let mut s = b[i * width + c];
                for j in 0..i {
                    s -= self.r[j * n + i] * b[j * width + c];
                }
                b[i * width + c] = s / self.r[i * n + i];
            }
        }
    }
}

/// Cholesky solve of `s x = rhs` for symmetric positive-definite `s`.
pub fn solve_spd(s: &DenseMatrix, rhs: &DenseMatrix) -> Result<DenseMatrix> {
    let n = s.rows;
    if s.cols != n || rhs.rows != n {
        return Err(Error::DimensionMismatch {
            op: "solve_spd",
            lhs: s.shape(),
            rhs: rhs.shape(),
        });
    }
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = s.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Singular(format!("Cholesky pivot {j} is {d:e}")));
        }
        let d = d.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    let w = rhs.cols;
    let mut x = rhs.data.clone();
    for c in 0..w {
        for i in 0..n {
            let mut v = x[i * w + c];
            for k in 0..i {
                v -= l[i * n + k] * x[k * w + c];
            }
            x[i * w + c] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i * w + c];
            for k in i + 1..n {
                v -= l[k * n + i] * x[k * w + c];
            }
            x[i * w + c] = v / l[i * n + i];
        }
    }
    finite_or(DenseMatrix::from_raw(n, w, x), "solve_spd")
}

/// Minimizes `||y - a X||_F^2 + lambda ||X||_F^2`.
///
/// `lambda > 0` goes through the normal equations and a Cholesky solve;
/// `lambda == 0` uses Householder QR and requires full column rank.
pub fn ridge_solve(a: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    if a.rows != y.rows {
        return Err(Error::DimensionMismatch {
            op: "ridge_solve",
            lhs: a.shape(),
            rhs: y.shape(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("ridge lambda {lambda} must be finite and >= 0")));
    }
    if lambda > 0.0 {
        let mut gram = matmul_tn(a, a)?;
        let n = gram.rows;
        for i in 0..n {
            gram.data[i * n + i] += lambda;
        }
        let rhs = matmul_tn(a, y)?;
        return solve_spd(&gram, &rhs);
    }
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::Singular(format!(
            "{m}x{n} system cannot have full column rank"
        )));
    }
    let qr = HouseholderQr::new(a);
    if qr.rank_deficient() {
        return Err(Error::Singular("rank-deficient least-squares system".into()));
    }
    let w = y.cols;
    let mut b = y.data.clone();
    qr.apply_qt(&mut b, w);
    b.truncate(n * w);
    qr.back_substitute(&mut b, w);
    finite_or(DenseMatrix::from_raw(n, w, b), "ridge_solve")
}

/// Minimum-norm least-squares solution of `b X = y` for a full-rank `b`
/// of either orientation.
pub fn lstsq_min_norm(b: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows != y.rows {
        return Err(Error::DimensionMismatch {
            op: "lstsq_min_norm",
            lhs: b.shape(),
            rhs: y.shape(),
        });
    }
    if b.rows >= b.cols {
        return ridge_solve(b, y, 0.0);
    }
    // Wide case: b^T = Q R, so b = R^T Q1^T and x = Q [R^{-T} y; 0].
    let bt = b.transpose();
    let qr = HouseholderQr::new(&bt);
    if qr.rank_deficient() {
        return Err(Error::Singular("rank-deficient underdetermined system".into()));
    }
    let w = y.cols;
    let mut z = y.data.clone();
    qr.forward_substitute_transposed(&mut z, w);
    z.resize(qr.m * w, 0.0);
    qr.apply_q(&mut z, w);
    finite_or(DenseMatrix::from_raw(qr.m, w, z), "lstsq_min_norm")
}
