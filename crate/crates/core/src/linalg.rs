//! Dense linear algebra for the small matrices that appear in momentum
//! analysis: closed-loop iteration matrices, Lyapunov covariances, the
//! 2x2 and 3x3 certificate matrices and their Kronecker lifts.
//!
//! Everything here is sized for `n <= ~100` and favours accuracy over speed.
//! The symmetric eigensolver is cyclic Jacobi; the Stein/Lyapunov solver works
//! on the vectorised system `(I - A (x) B) vec(X) = vec(C)`.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance used by PSD tests.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_REL_TOL: f64 = 1e-13;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>14.8e} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        Self::from_vec(r, c, rows.iter().flatten().copied().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks(self.cols.max(1))
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Kronecker product `self (x) other`.
    pub fn kron(&self, other: &Matrix) -> Matrix {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        let mut out = Matrix::zeros(r, c);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == 0.0 {
                    continue;
                }
                for p in 0..other.rows {
                    for q in 0..other.cols {
                        out[(i * other.rows + p, j * other.cols + q)] = a * other[(p, q)];
                    }
                }
            }
        }
        out
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let gram = SymMatrix::from_matrix_symmetrized(&self.transpose().matmul(self));
        match sym_eig(&gram) {
            Ok(s) => s.max().max(0.0).sqrt(),
            Err(_) => f64::NAN,
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

/// Square matrix whose storage is exactly symmetric.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(Matrix);

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.0)
    }
}

impl SymMatrix {
    /// Wraps a square matrix, rejecting anything not exactly symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.rows == 0 {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square with dim >= 1, got {}x{}",
                m.rows, m.cols
            )));
        }
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidInput(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Averages `m` with its transpose.
    pub fn from_matrix_symmetrized(m: &Matrix) -> Self {
        assert!(m.is_square(), "symmetrisation needs a square matrix");
        let mut s = m.clone();
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        Self(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        Self(Matrix::from_diag(diag))
    }

    /// `v v^T` scaled by `s`.
    pub fn outer(v: &[f64], s: f64) -> Self {
        let n = v.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = s * v[i] * v[j];
            }
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        Self(&self.0 - &other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn kron(&self, other: &SymMatrix) -> Self {
        Self(self.0.kron(&other.0))
    }

    /// `z^T M z`.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        let mz = self.0.matvec(z);
        mz.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// `A M A^T`, symmetrised.
    pub fn congruence(&self, a: &Matrix) -> Self {
        Self::from_matrix_symmetrized(&a.matmul(&self.0).matmul(&a.transpose()))
    }

    /// Spectral norm, i.e. the largest eigenvalue modulus.
    pub fn norm(&self) -> f64 {
        match sym_eig(self) {
            Ok(s) => s.eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs())),
            Err(_) => f64::NAN,
        }
    }
}

impl Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.0.to_rows()
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
/// Column `i` of `eigenvectors` pairs with `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `V diag(f(lambda)) V^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let n = self.dim();
        let v = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = w * v[(i, k)];
                for j in 0..n {
                    out[(i, j)] += vik * v[(j, k)];
                }
            }
        }
        SymMatrix::from_matrix_symmetrized(&out)
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|l| l)
    }
}

/// Cyclic Jacobi eigendecomposition.
pub fn sym_eig(m: &SymMatrix) -> Result<Spectrum> {
    if !m.0.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    if scale > 0.0 {
        let target = JACOBI_REL_TOL * scale;
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diagonal_norm(&a) <= target {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            eigenvectors[(row, col)] = v[(row, src)];
        }
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

// One Jacobi rotation zeroing a[(p,q)]; accumulates into v.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let n = a.rows;
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
    pub is_neg_semidefinite: bool,
    pub is_pos_definite: bool,
}

pub fn max_eig_and_psd(m: &SymMatrix, tol: f64) -> Result<PsdReport> {
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput("tolerance must be >= 0".into()));
    }
    let s = sym_eig(m)?;
    Ok(PsdReport {
        max_eigenvalue: s.max(),
        min_eigenvalue: s.min(),
        is_neg_semidefinite: s.max() <= tol,
        is_pos_definite: s.min() > tol,
    })
}

/// Principal square root of a PSD matrix. Slightly negative eigenvalues
/// (down to `-1e-8 * ||M||`) and roundoff-level ones are set to zero.
pub fn psd_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let s = sym_eig(m)?;
    let norm = s.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if s.min() < -1e-8 * norm {
        return Err(Error::NotPsd {
            min_eigenvalue: s.min(),
        });
    }
    let floor = 64.0 * f64::EPSILON * norm;
    Ok(s.map(|l| if l <= floor { 0.0 } else { l.sqrt() }))
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows;
    if !a.is_square() || b.len() != n {
        return Err(Error::InvalidInput("solve_linear dimension mismatch".into()));
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty pivot range");
        if pmax <= 1e-14 * scale {
            return Err(Error::Singular);
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for j in (col + 1)..n {
            acc -= m[col * n + j] * x[j];
        }
        x[col] = acc / m[col * n + col];
    }
    Ok(x)
}

/// Upper bound on the spectral radius from Gelfand's formula,
/// `||A^(2^j)||^(1/2^j)`, evaluated by repeated squaring with rescaling.
/// The bound is tight up to a factor `n^(2^-j)` for defective matrices.
pub fn spectral_radius_bound(a: &Matrix) -> f64 {
    assert!(a.is_square());
    let mut p = a.clone();
    let mut log_scale = 0.0f64;
    let mut exponent = 1.0f64;
    let mut best = a.frobenius_norm();
    for _ in 0..48 {
        let nrm = p.frobenius_norm();
        if nrm == 0.0 {
            return 0.0;
        }
        if !nrm.is_finite() {
            break;
        }
        let est = ((nrm.ln() + log_scale) / exponent).exp();
        best = best.min(est);
        let q = p.scale(1.0 / nrm);
        log_scale = 2.0 * (log_scale + nrm.ln());
        p = q.matmul(&q);
        exponent *= 2.0;
    }
    best
}

/// Solves the Stein equation `X = A X B^T + C` via
/// `(I - A (x) B) vec(X) = vec(C)` with row-major vec.
pub fn solve_stein(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    let (n, m) = (a.rows, b.rows);
    if !a.is_square() || !b.is_square() || c.rows != n || c.cols != m {
        return Err(Error::InvalidInput("solve_stein dimension mismatch".into()));
    }
    let mut sys = a.kron(b).scale(-1.0);
    for i in 0..n * m {
        sys[(i, i)] += 1.0;
    }
    let x = solve_linear(&sys, c.as_slice())?;
    Matrix::from_vec(n, m, x)
}

/// Solves `X = A X A^T + Q` for stable `A`.
pub fn solve_discrete_lyapunov(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    if !a.is_square() || a.rows != q.dim() {
        return Err(Error::InvalidInput("lyapunov dimension mismatch".into()));
    }
    if !a.is_finite() || !q.0.is_finite() {
        return Err(Error::InvalidInput("non-finite entry".into()));
    }
    let radius = spectral_radius_bound(a);
    if radius >= 1.0 - 1e-10 {
        return Err(Error::Unstable { radius });
    }
    let x = solve_stein(a, a, &q.0)?;
    Ok(SymMatrix::from_matrix_symmetrized(&x))
}

/// `||A^k||_2` for `k = 1..=k_max`.
pub fn power_norm_curve(a: &Matrix, k_max: usize) -> Result<Vec<f64>> {
    if !a.is_square() || k_max == 0 {
        return Err(Error::InvalidInput(
            "power_norm_curve needs a square matrix and k_max >= 1".into(),
        ));
    }
    let mut p = a.clone();
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        if k > 1 {
            p = p.matmul(a);
        }
        out.push(p.spectral_norm());
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
