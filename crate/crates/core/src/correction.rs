//! Second-order bias correction for the covariance of the iid terms.

use nalgebra::DMatrix;

use crate::cohort::Cohort;
use crate::error::Result;
use crate::linalg::symmetrize;
use crate::logrank::logrank_pass;
use crate::propensity::FittedPropensity;
use crate::regime::Regime;

#[derive(Debug, Clone)]
pub struct CorrectionTerms {
    /// n x (D - 1) matrix of G_i.
    pub g: DMatrix<f64>,
    /// n^{-1} sum_l Ybar_l(u) on the grid; 0 at dropped points.
    pub mean_ybar: Vec<f64>,
}

/// G_i for every subject, computed in the same grid pass as the iid terms.
pub fn g_terms(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity, l: f64) -> Result<CorrectionTerms> {
    let pass = logrank_pass(cohort, regimes, prop, l)?;
    Ok(CorrectionTerms {
        g: pass.g,
        mean_ybar: pass.mean_ybar,
    })
}

/// The n^{-1}-order correction term added to `sigma`.
pub fn correction_term(iid: &DMatrix<f64>, g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let n = n as f64;
    let tg = iid.transpose() * g;
    let m = (&tg + tg.transpose()) * (2.0 / n);
    m / n
}

/// Sigma + n^{-1} [n^{-1} sum_i (2 T_i G_i^T + 2 G_i T_i^T)].
pub fn corrected_covariance(sigma: &DMatrix<f64>, iid: &DMatrix<f64>, g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    symmetrize(&(sigma + correction_term(iid, g, n)))
}
