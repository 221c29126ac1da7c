//! Minimal dense linear algebra for small feature matrices.
//!
//! Everything here targets matrices with at most a few dozen columns, so the
//! implementations favor determinism and clarity over asymptotics: cyclic
//! Jacobi rotations for symmetric eigendecomposition and an unpivoted
//! Cholesky factorization for SPD solves.

use crate::error::Error;
use crate::num::Real;
use crate::Result;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Real> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    /// Builds a matrix from a row-major value vector.
    ///
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix shape mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Copies the listed columns into a new matrix, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, keep.len());
        for i in 0..self.rows {
            for (jo, &ji) in keep.iter().enumerate() {
                out[(i, jo)] = self[(i, ji)];
            }
        }
        out
    }

    pub fn column(&self, j: usize) -> Vec<F> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += aik * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(self.cols, x.len(), "matvec shape mismatch");
        self.iter_rows()
            .map(|r| r.iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> F {
        (0..self.rows.min(self.cols))
            .map(|i| self[(i, i)])
            .sum()
    }

    pub fn frobenius_norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> F {
        self.data
            .iter()
            .fold(F::zero(), |m, &x| m.max(x.abs()))
    }

    /// Sample covariance of the rows, `X'X`-style with the given denominator.
    ///
    /// Columns are centered on their means first.
    pub fn covariance(&self, denominator: F) -> Self {
        let (n, p) = (self.rows, self.cols);
        let means: Vec<F> = (0..p)
            .map(|j| self.column(j).iter().copied().sum::<F>() / F::from_count(n))
            .collect();
        let mut cov = Self::zeros(p, p);
        for row in self.iter_rows() {
            for a in 0..p {
                let da = row[a] - means[a];
                for b in a..p {
                    cov[(a, b)] += da * (row[b] - means[b]);
                }
            }
        }
        for a in 0..p {
            for b in a..p {
                let v = cov[(a, b)] / denominator;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        cov
    }
}

impl<F: Real> std::ops::Index<(usize, usize)> for Matrix<F> {
    type Output = F;
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F: Real> std::ops::IndexMut<(usize, usize)> for Matrix<F> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Euclidean distance between two equal-length slices.
pub fn euclidean<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
        .sqrt()
}

const JACOBI_MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted in
/// non-increasing order and eigenvectors as the matching columns of an
/// orthonormal matrix. Ties keep the original diagonal order, which makes the
/// output deterministic.
pub fn jacobi_eigen<F: Real>(m: &Matrix<F>) -> Result<(Vec<F>, Matrix<F>)> {
    let n = m.rows();
    assert_eq!(n, m.cols(), "jacobi_eigen needs a square matrix");
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    if n == 0 {
        return Ok((vec![], v));
    }

    let scale = a.frobenius_norm().max(F::one());
    let tol = F::epsilon() * scale * F::from_count(n);

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol * F::epsilon() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (F::from_f64_lossy(2.0) * apq);
                let t = {
                    let denom = theta.abs() + (theta * theta + F::one()).sqrt();
                    if theta >= F::zero() {
                        F::one() / denom
                    } else {
                        -F::one() / denom
                    }
                };
                let c = F::one() / (t * t + F::one()).sqrt();
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
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        let mut off = F::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() > tol {
            return Err(Error::Numeric(format!(
                "jacobi eigendecomposition did not converge in {JACOBI_MAX_SWEEPS} sweeps \
                 (n = {n}, off-diagonal norm = {:e}, frobenius = {:e})",
                off.sqrt().to_f64().unwrap_or(f64::NAN),
                scale.to_f64().unwrap_or(f64::NAN),
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .partial_cmp(&a[(i, i)])
            .expect("eigenvalues are finite")
            .then(i.cmp(&j))
    });
    let values: Vec<F> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (jo, &ji) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, jo)] = v[(k, ji)];
        }
    }
    Ok((values, vectors))
}

/// Cholesky factor `L` of an SPD matrix (`A = L Lᵀ`).
#[derive(Debug, Clone)]
pub struct Cholesky<F> {
    l: Matrix<F>,
}

impl<F: Real> Cholesky<F> {
    /// Factorizes `a`; fails with a numeric error if a pivot is not positive.
    pub fn new(a: &Matrix<F>) -> Result<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a[(i, j)];
                for k in 0..j {
                    sum -= l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum <= F::zero() {
                        return Err(Error::Numeric(format!(
                            "cholesky pivot {i} is not positive ({:e}); matrix is not SPD \
                             (dim = {n}, trace = {:e})",
                            sum.to_f64().unwrap_or(f64::NAN),
                            a.trace().to_f64().unwrap_or(f64::NAN),
                        )));
                    }
                    l[(i, j)] = sum.sqrt();
                } else {
                    l[(i, j)] = sum / l[(j, j)];
                }
            }
        }
        Ok(Cholesky { l })
    }

    /// `log |A|`, computed from the factor diagonal.
    pub fn log_det(&self) -> F {
        let two = F::from_f64_lossy(2.0);
        (0..self.l.rows())
            .map(|i| self.l[(i, i)].ln())
            .sum::<F>()
            * two
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let n = self.l.rows();
        debug_assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let yk = y[k];
                y[i] = y[i] - self.l[(i, k)] * yk;
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let yk = y[k];
                y[i] = y[i] - self.l[(k, i)] * yk;
            }
            y[i] = y[i] / self.l[(i, i)];
        }
        y
    }

    /// `A⁻¹`, symmetrized to guard against round-off drift.
    pub fn inverse(&self) -> Matrix<F> {
        let n = self.l.rows();
        let mut inv = Matrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![F::zero(); n];
            e[j] = F::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        let half = F::from_f64_lossy(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (inv[(i, j)] + inv[(j, i)]) * half;
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}
