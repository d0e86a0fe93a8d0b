//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub inverse: DMatrix<f64>,
    pub rank: usize,
    /// Eigenvalues below `-tol * lambda_max` that were zeroed.
    pub negative_eigenvalues: usize,
}

/// Moore-Penrose pseudoinverse of a symmetric matrix through its
/// eigendecomposition. Eigenvalues at or below `tol * lambda_max` are dropped.
pub fn pinv_rank(s: &DMatrix<f64>, tol: f64) -> Result<PseudoInverse> {
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension(format!(
            "pinv_rank needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let p = s.nrows();
    if p == 0 {
        return Err(Error::AllZeroMatrix);
    }
    let sym = symmetrize(s);
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if lmax <= 0.0 || !lmax.is_finite() {
        return Err(Error::AllZeroMatrix);
    }
    let cutoff = tol * lmax;
    let mut inv = DMatrix::zeros(p, p);
    let mut rank = 0;
    let mut negative = 0;
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / lambda;
        } else if lambda < -cutoff {
            negative += 1;
        }
    }
    Ok(PseudoInverse {
        inverse: symmetrize(&inv),
        rank,
        negative_eigenvalues: negative,
    })
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `n^{-1} sum_i x_i x_i^T` over the rows of `rows`.
pub fn mean_outer(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = rows.nrows();
    if n == 0 {
        return DMatrix::zeros(rows.ncols(), rows.ncols());
    }
    rows.transpose() * rows / n as f64
}

/// Quadratic form `v^T M v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

pub fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}
