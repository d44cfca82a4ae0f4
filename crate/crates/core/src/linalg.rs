//! Small dense linear algebra used throughout the crate.
//!
//! Everything here operates on row-major [`Matrix`] values. The problem
//! sizes are modest — Gram matrices are at most a few hundred on a side,
//! GP kernel matrices a few dozen — so a dependency-free implementation
//! with fixed-order reductions is preferred over a BLAS binding: results
//! are bit-reproducible across machines and the code stays auditable.
//!
//! The thin SVD is computed from the eigendecomposition of the smaller
//! Gram matrix (`AᵀA` or `AAᵀ`), which is symmetric positive
//! semi-definite, using cyclic Jacobi rotations. Jacobi is slower than
//! QR iteration but unconditionally convergent and deterministic, and at
//! these sizes speed is irrelevant. The price of the Gram route is a
//! squared condition number; singular values below `1e-12` times the
//! largest are therefore treated as exact zeros and their vectors are
//! dropped rather than reconstructed from noise.

use thiserror::Error;

/// Relative threshold below which a singular value is treated as zero.
pub const SV_ZERO_FLOOR: f64 = 1e-12;

/// Relative off-diagonal threshold for Jacobi convergence.
const JACOBI_TOL: f64 = 1e-12;

/// Hard cap on Jacobi sweeps; cyclic Jacobi on these sizes converges in
/// well under 20 sweeps, so hitting this indicates NaNs in the input.
const JACOBI_MAX_SWEEPS: usize = 128;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major slice. Panics if the length does not match.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data: data.to_vec() }
    }

    /// Take ownership of a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self * other`. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j loop order keeps both operands in row-major streaming access.
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other` without forming the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul row mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &other.data[k * other.cols..(k + 1) * other.cols];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * otherᵀ` without forming the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t column mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let brow = &other.data[j * other.cols..(j + 1) * other.cols];
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Eigendecomposition of a symmetric matrix: `a = q diag(values) qᵀ`,
/// eigenvalues sorted descending, eigenvectors as the columns of `q`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub q: Matrix,
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps zero every off-diagonal pair in turn until all off-diagonal
/// magnitudes fall below `1e-12 · ‖a‖_F`. Only the lower/upper symmetric
/// part consistent with `a` being exactly symmetric is assumed; the
/// caller is responsible for symmetry.
pub fn sym_eigen(a: &Matrix) -> SymEigen {
    assert_eq!(a.rows, a.cols, "sym_eigen requires a square matrix");
    let n = a.rows;
    let mut m = a.clone();
    let mut q = Matrix::identity(n);
    if n > 1 {
        let tol = JACOBI_TOL * a.frobenius_norm();
        'sweeps: for _ in 0..JACOBI_MAX_SWEEPS {
            let mut max_off = 0.0f64;
            for p in 0..n - 1 {
                for r in p + 1..n {
                    let apr = m.at(p, r);
                    max_off = max_off.max(apr.abs());
                    if apr.abs() <= tol {
                        continue;
                    }
                    // Classic two-sided Jacobi rotation annihilating m[p][r].
                    let app = m.at(p, p);
                    let arr = m.at(r, r);
                    let tau = (arr - app) / (2.0 * apr);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m.at(k, p);
                        let mkr = m.at(k, r);
                        m.set(k, p, c * mkp - s * mkr);
                        m.set(k, r, s * mkp + c * mkr);
                    }
                    for k in 0..n {
                        let mpk = m.at(p, k);
                        let mrk = m.at(r, k);
                        m.set(p, k, c * mpk - s * mrk);
                        m.set(r, k, s * mpk + c * mrk);
                    }
                    for k in 0..n {
                        let qkp = q.at(k, p);
                        let qkr = q.at(k, r);
                        q.set(k, p, c * qkp - s * qkr);
                        q.set(k, r, s * qkp + c * qkr);
                    }
                }
            }
            if max_off <= tol {
                break 'sweeps;
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Stable descending sort keeps tied eigenvalues in rotation order,
    // which makes the output deterministic.
    order.sort_by(|&i, &j| m.at(j, j).partial_cmp(&m.at(i, i)).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m.at(i, i)).collect();
    let mut qs = Matrix::zeros(n, n);
    for (newj, &oldj) in order.iter().enumerate() {
        for i in 0..n {
            qs.set(i, newj, q.at(i, oldj));
        }
    }
    SymEigen { values, q: qs }
}

/// Thin singular value decomposition `a = u diag(s) vᵀ`.
///
/// Columns whose singular value falls below [`SV_ZERO_FLOOR`] times the
/// largest are dropped, so `u` is `m×r`, `v` is `n×r` with `r = rank`.
/// Sign convention: in each column of `u` the entry of largest magnitude
/// is positive (ties broken by lowest row index), with the paired column
/// of `v` flipped to preserve the product.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn thin_svd(a: &Matrix) -> Svd {
    let (m, n) = (a.rows, a.cols);
    // Eigendecompose the smaller Gram matrix, then recover the other factor.
    let (mut u, s, mut v) = if m >= n {
        let gram = a.t_matmul(a); // n×n
        let eig = sym_eigen(&gram);
        let s: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let keep = kept_rank(&s);
        let v = take_cols(&eig.q, keep);
        let s = s[..keep].to_vec();
        // u_j = a v_j / s_j; re-orthonormalized because the division
        // amplifies rounding when the spectrum spans many decades.
        let av = a.matmul(&v);
        let mut u = scale_cols(&av, &s);
        orthonormalize_cols(&mut u);
        (u, s, v)
    } else {
        let gram = a.matmul_t(a); // m×m
        let eig = sym_eigen(&gram);
        let s: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
        let keep = kept_rank(&s);
        let u = take_cols(&eig.q, keep);
        let s = s[..keep].to_vec();
        let atu = a.t_matmul(&u);
        let mut v = scale_cols(&atu, &s);
        orthonormalize_cols(&mut v);
        (u, s, v)
    };
    for j in 0..s.len() {
        let col = u.col(j);
        let mut imax = 0;
        let mut vmax = 0.0f64;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > vmax {
                vmax = x.abs();
                imax = i;
            }
        }
        if col[imax] < 0.0 {
            for i in 0..u.rows {
                let x = u.at(i, j);
                u.set(i, j, -x);
            }
            for i in 0..v.rows {
                let x = v.at(i, j);
                v.set(i, j, -x);
            }
        }
    }
    Svd { u, s, v }
}

/// Number of leading singular values kept under the relative zero floor.
fn kept_rank(s: &[f64]) -> usize {
    let smax = s.first().copied().unwrap_or(0.0);
    if smax <= 0.0 {
        return 0;
    }
    s.iter().take_while(|&&x| x >= smax * SV_ZERO_FLOOR).count()
}

fn take_cols(m: &Matrix, k: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows, k);
    for i in 0..m.rows {
        for j in 0..k {
            out.set(i, j, m.at(i, j));
        }
    }
    out
}

/// Two passes of modified Gram–Schmidt over the columns. The input is
/// already near-orthonormal, so this only polishes rounding error;
/// "twice is enough" for full working precision.
fn orthonormalize_cols(m: &mut Matrix) {
    for _ in 0..2 {
        for j in 0..m.cols() {
            for k in 0..j {
                let mut proj = 0.0;
                for i in 0..m.rows() {
                    proj += m.at(i, k) * m.at(i, j);
                }
                for i in 0..m.rows() {
                    let x = m.at(i, j) - proj * m.at(i, k);
                    m.set(i, j, x);
                }
            }
            let mut norm = 0.0;
            for i in 0..m.rows() {
                norm += m.at(i, j) * m.at(i, j);
            }
            let norm = norm.sqrt();
            if norm > 0.0 {
                for i in 0..m.rows() {
                    let x = m.at(i, j) / norm;
                    m.set(i, j, x);
                }
            }
        }
    }
}

/// Divide column `j` by `s[j]` (used to normalize recovered factors).
fn scale_cols(m: &Matrix, s: &[f64]) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows {
        for j in 0..s.len() {
            let x = out.at(i, j) / s[j];
            out.set(i, j, x);
        }
    }
    out
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix: `a = l lᵀ`. Fails with the offending pivot if a diagonal
/// element becomes non-positive.
pub fn cholesky(a: &Matrix) -> Result<Matrix, LinalgError> {
    assert_eq!(a.rows, a.cols, "cholesky requires a square matrix");
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(LinalgError::NotPositiveDefinite { pivot: i, value: sum });
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.at(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve `l y = b` for lower-triangular `l`.
pub fn forward_substitute(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.at(i, k) * y[k];
        }
        y[i] = sum / l.at(i, i);
    }
    y
}

/// Solve `lᵀ x = y` for lower-triangular `l`.
pub fn back_substitute_t(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(y.len(), n);
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l.at(k, i) * x[k];
        }
        x[i] = sum / l.at(i, i);
    }
    x
}

/// Solve `a x = b` given the Cholesky factor `l` of `a`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    back_substitute_t(l, &forward_substitute(l, b))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
