//! Projection of the iid terms onto propensity scores and covariate basis
//! functions.

use nalgebra::DMatrix;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::linalg::{column_sums, pinv_rank};
use crate::logrank::{chi2_from_terms, logrank_pass, check_regimes, TestOptions, TestResult, Variant, VariantKind, Warnings};
use crate::propensity::{fit_propensity, FittedPropensity, PropensitySpec, StageColumns};
use crate::regime::Regime;

/// Covariate columns per stage or stratum, without an intercept.
pub type BasisSpec = StageColumns;

/// Relative eigenvalue cutoff for the regression normal equations.
pub const REGRESSION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub rank: usize,
}

impl DesignMatrix {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.x.ncols()
    }
}

/// Rows are `[score | basis blocks]`. A basis block for a stratum is the
/// stratum's residual vector times each listed covariate; blocks for stages
/// a subject never reached are zero.
pub fn build_design_matrix(cohort: &Cohort, fitted: &FittedPropensity, basis: &BasisSpec) -> Result<DesignMatrix> {
    let design = cohort.design();
    basis.validate(design, false)?;
    // (stage, stratum, columns, width of the residual vector)
    let mut blocks = Vec::new();
    let mut width = fitted.score_dim();
    for k in 1..=design.stages() {
        for (s, stratum) in design.strata(k).iter().enumerate() {
            if let Some(cols) = basis.columns(k, &stratum.name) {
                let m = stratum.options.len() - 1;
                blocks.push((k, s, cols.to_vec(), width));
                width += m * cols.len();
            }
        }
    }
    let n = cohort.len();
    let mut x = DMatrix::zeros(n, width);
    let mut row = vec![0.0; width];
    for (i, subj) in cohort.subjects().iter().enumerate() {
        row.iter_mut().for_each(|v| *v = 0.0);
        for k in 1..=subj.kappa {
            let s = cohort.stratum(i, k).expect("validated cohort");
            fitted.write_score_block(subj, k, s, &mut row);
        }
        for (k, s, cols, off) in &blocks {
            if subj.kappa < *k || cohort.stratum(i, *k) != Some(*s) {
                continue;
            }
            let resid = fitted.stratum_residuals(subj, *k, *s);
            let mut c = *off;
            for e in &resid {
                for name in cols {
                    let v = subj.covariates.get(name).copied().ok_or_else(|| Error::InvalidSubject {
                        id: subj.id.clone(),
                        message: format!("missing basis column {name}"),
                    })?;
                    row[c] = e * v;
                    c += 1;
                }
            }
        }
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    let rank = if width == 0 {
        0
    } else {
        match pinv_rank(&(x.transpose() * &x), REGRESSION_TOLERANCE) {
            Ok(p) => p.rank,
            Err(Error::AllZeroMatrix) => 0,
            Err(e) => return Err(e),
        }
    };
    Ok(DesignMatrix { x, rank })
}

/// Residuals of the no-intercept least-squares regression of each column of
/// `iid` on `x`.
pub fn residualize(iid: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if iid.nrows() != x.nrows() {
        return Err(Error::Dimension(format!(
            "iid has {} rows but the design has {}",
            iid.nrows(),
            x.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Ok(iid.clone());
    }
    let xtx = x.transpose() * x;
    let pinv = match pinv_rank(&xtx, REGRESSION_TOLERANCE) {
        Ok(p) => p,
        Err(Error::AllZeroMatrix) => return Ok(iid.clone()),
        Err(e) => return Err(e),
    };
    let beta = pinv.inverse * (x.transpose() * iid);
    Ok(iid - x * beta)
}

/// Test with estimated propensities, residualizing the iid terms on the
/// score and basis columns. The G terms of the correction are not
/// residualized.
pub fn run_augmented_test(
    cohort: &Cohort,
    regimes: &[Regime],
    spec: &PropensitySpec,
    basis: &BasisSpec,
    options: &TestOptions,
) -> Result<TestResult> {
    check_regimes(cohort, regimes)?;
    let fitted = fit_propensity(cohort, spec)?;
    let l = options.truncation.resolve(cohort);
    let pass = logrank_pass(cohort, regimes, &fitted, l)?;
    let design = build_design_matrix(cohort, &fitted, basis)?;
    let kind = if design.x.ncols() > 0 {
        VariantKind::Augmented
    } else if spec.is_estimated() {
        VariantKind::EstimatedGamma
    } else {
        VariantKind::Plain
    };
    let resid = residualize(&pass.iid, &design.x)?;
    let out = chi2_from_terms(&resid, options.correction.then_some(&pass.g), options.rank_tolerance)?;
    Ok(TestResult {
        statistic: out.statistic,
        nu: out.nu,
        p_value: out.p_value,
        variant: Variant {
            kind,
            corrected: options.correction,
        },
        components: column_sums(&resid).iter().copied().collect(),
        rank_tolerance: options.rank_tolerance,
        truncation: l,
        warnings: Warnings {
            dropped_grid_points: pass.dropped,
            negative_eigenvalues: out.negative_eigenvalues,
            rank_deficient_design: design.rank_deficient(),
        },
        n: cohort.len(),
        regimes: regimes.iter().map(|r| r.label.clone()).collect(),
    })
}
