//! Dense linear-algebra helpers on top of `nalgebra`.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{pairwise_distance, Position};
use crate::{Error, Result};

/// First jitter tried, relative to the mean diagonal.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried, relative to the mean diagonal.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of a symmetric positive-definite matrix, plus the diagonal
/// jitter that was needed to obtain it.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Factors `a`, escalating a diagonal jitter ×10 from `1e-10` up to
    /// `1e-4` times the mean diagonal before giving up.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::InvalidInput("matrix to factor must be square".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix to factor has non-finite entries".into()));
        }
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let mean_diag = if n == 0 { 1.0 } else { a.diagonal().iter().sum::<f64>() / n as f64 };
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut rel = JITTER_START;
        while rel <= JITTER_MAX * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut b = a.clone();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(b) {
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::NotPositiveDefinite { size: n, max_jitter: JITTER_MAX * scale })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Diagonal jitter added before the factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut out = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut out);
        out
    }

    /// `L z`, used to colour white samples.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// `A⁻¹ = L⁻ᵀL⁻¹`, with `L⁻¹` formed column by column.
    pub fn inverse(&self) -> DMatrix<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let ls = l.as_slice();
        // column-major L⁻¹; column j is zero above row j
        let mut b = alloc::vec![0.0f64; n * n];
        for j in 0..n {
            let col = &mut b[j * n..(j + 1) * n];
            col[j] = 1.0;
            for k in j..n {
                let v = col[k] / ls[k * n + k];
                col[k] = v;
                if v != 0.0 {
                    let lk = &ls[k * n + k + 1..(k + 1) * n];
                    for (c, lv) in col[k + 1..].iter_mut().zip(lk) {
                        *c -= v * lv;
                    }
                }
            }
        }
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let cj = &b[j * n + j..(j + 1) * n];
            for i in 0..=j {
                let ci = &b[i * n + j..(i + 1) * n];
                let v = dot(ci, cj);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Whether `a` admits a Cholesky factorization without any jitter.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.nrows() == a.ncols() && Cholesky::new(a.clone()).is_some()
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix. Eigenvalues below
/// `rel_cutoff · max|λ|` are dropped; the flag reports whether any were.
pub fn pinv_symmetric(a: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, bool) {
    let n = a.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), false);
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rel_cutoff * max_abs;
    let mut singular = max_abs == 0.0;
    let mut inv = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff || lambda == 0.0 {
            singular = true;
            continue;
        }
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / lambda;
    }
    (inv, singular)
}

/// Pseudo-inverse of a general square matrix through the SVD.
pub fn pinv_general(a: &DMatrix<f64>, rel_cutoff: f64) -> (DMatrix<f64>, bool) {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let eps = rel_cutoff * max_sv;
    let singular = max_sv == 0.0 || svd.singular_values.iter().any(|s| *s <= eps);
    let inv = svd.pseudo_inverse(eps.max(f64::MIN_POSITIVE)).unwrap_or_else(|_| DMatrix::zeros(a.ncols(), a.nrows()));
    (inv, singular)
}

/// Matrix of pairwise Euclidean distances, `a.len() × b.len()`.
pub fn distance_matrix(a: &[Position], b: &[Position]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| pairwise_distance(a[i], b[j]))
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub(crate) fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

pub(crate) fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}
