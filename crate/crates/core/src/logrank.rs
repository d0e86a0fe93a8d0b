//! IPW generalized logrank machinery: weights, baseline hazard increments,
//! the score vector, its iid decomposition, the chi-square test and
//! regime-specific cumulative hazards.
//!
//! All sums over the event grid run over subjects in cohort order at each
//! grid time, grid times ascending.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{counting_views, event_grid, truncation_time, Cohort, SubjectRecord};
use crate::correction::corrected_covariance;
use crate::error::{Error, Result};
use crate::linalg::{column_sums, mean_outer, pinv_rank, quad_form, DEFAULT_RANK_TOLERANCE};
use crate::propensity::{FittedPropensity, PropensityMode, MIN_PROB};
use crate::regime::{consistency_indicator, evaluate_rule, propensity_product, Regime, Selection};
use crate::special::chi2_sf;

pub const DEFAULT_AT_RISK_FRACTION: f64 = 0.02;

/// Omega_i(u, d) = C(u, d) I(U >= u) / pi(u, d) for one subject.
pub fn omega(subject: &SubjectRecord, regime: &Regime, u: f64, prop: &FittedPropensity) -> Result<f64> {
    if subject.u < u || !consistency_indicator(subject, regime, u) {
        return Ok(0.0);
    }
    let pi = propensity_product(subject, regime, u, prop)?;
    Ok(1.0 / pi)
}

#[derive(Debug, Clone)]
struct SubjectWeights {
    u: f64,
    dn: bool,
    times: Vec<f64>,
    /// `weights[j * kappa + m]`: Omega once decisions 1..=m+1 are reached.
    weights: Vec<f64>,
}

/// Omega weights for every subject and regime, stored as step functions
/// that change only at decision times.
#[derive(Debug, Clone)]
pub struct WeightTable {
    n_regimes: usize,
    rows: Vec<SubjectWeights>,
}

impl WeightTable {
    pub fn build(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity) -> Result<Self> {
        let d = regimes.len();
        let mut rows = Vec::with_capacity(cohort.len());
        for (i, s) in cohort.subjects().iter().enumerate() {
            let kappa = s.kappa;
            let mut omega_obs = Vec::with_capacity(kappa);
            for k in 1..=kappa {
                let stratum = cohort.stratum(i, k).expect("validated cohort");
                omega_obs.push(prop.predict_in_stratum(s, k, stratum, s.treatment(k)));
            }
            let mut weights = vec![0.0; d * kappa];
            for (j, regime) in regimes.iter().enumerate() {
                let mut pi = 1.0;
                for k in 1..=kappa {
                    match evaluate_rule(regime, k, &s.history(k)) {
                        Selection::Treat(a) if a == s.treatment(k) => {}
                        _ => break,
                    }
                    let w = omega_obs[k - 1];
                    if w <= 0.0 {
                        return Err(Error::PositivityViolation {
                            subject: s.id.clone(),
                            stage: k,
                        });
                    }
                    pi *= w.max(MIN_PROB);
                    weights[j * kappa + k - 1] = 1.0 / pi;
                }
            }
            rows.push(SubjectWeights {
                u: s.u,
                dn: s.delta,
                times: s.decision_times.clone(),
                weights,
            });
        }
        Ok(WeightTable { n_regimes: d, rows })
    }

    pub fn n_regimes(&self) -> usize {
        self.n_regimes
    }

    pub fn n_subjects(&self) -> usize {
        self.rows.len()
    }

    fn stage_index(row: &SubjectWeights, u: f64) -> usize {
        row.times.iter().take_while(|&&t| t <= u).count().max(1) - 1
    }

    pub fn omega(&self, i: usize, j: usize, u: f64) -> f64 {
        let row = &self.rows[i];
        if row.u < u {
            return 0.0;
        }
        row.weights[j * row.times.len() + Self::stage_index(row, u)]
    }

    /// Writes Omega_i(u, d^j) for all j; returns false when not at risk.
    fn fill(&self, i: usize, u: f64, out: &mut [f64]) -> bool {
        let row = &self.rows[i];
        if row.u < u {
            return false;
        }
        let m = Self::stage_index(row, u);
        let kappa = row.times.len();
        for (j, o) in out.iter_mut().enumerate() {
            *o = row.weights[j * kappa + m];
        }
        true
    }
}

/// Everything one pass over the grid produces.
#[derive(Debug, Clone)]
pub struct LogrankPass {
    pub grid: Vec<f64>,
    /// dLambda0-hat at each grid time; 0 at dropped points.
    pub dlambda0: Vec<f64>,
    /// q-hat(u, d^j), grid-major with `n_regimes` entries per time.
    pub qhat: Vec<f64>,
    /// n^{-1} sum_l Ybar_l(u).
    pub mean_ybar: Vec<f64>,
    pub dropped: usize,
    /// Score vector computed from its definition, length D - 1.
    pub score: DVector<f64>,
    /// n x (D - 1) iid terms.
    pub iid: DMatrix<f64>,
    /// n x (D - 1) bias-correction G terms.
    pub g: DMatrix<f64>,
}

impl LogrankPass {
    /// An empty grid yields all-zero outputs.
    pub fn compute(weights: &WeightTable, grid: &[f64]) -> Self {
        let n = weights.n_subjects();
        let d = weights.n_regimes;
        let p = d.saturating_sub(1);
        let mut dlambda0 = vec![0.0; grid.len()];
        let mut qhat = vec![0.0; grid.len() * d];
        let mut mean_ybar = vec![0.0; grid.len()];
        let mut dropped = 0;
        let mut score = DVector::zeros(p);
        let mut iid = DMatrix::zeros(n, p);
        let mut g = DMatrix::zeros(n, p);

        let mut at_risk: Vec<usize> = Vec::with_capacity(n);
        let mut om: Vec<f64> = Vec::with_capacity(n * d);
        let mut buf = vec![0.0; d];
        for (gi, &u) in grid.iter().enumerate() {
            at_risk.clear();
            om.clear();
            let mut sum_y = 0.0;
            let mut sum_dn = 0.0;
            let mut s_j = vec![0.0; d];
            for i in 0..n {
                if !weights.fill(i, u, &mut buf) {
                    continue;
                }
                let row = &weights.rows[i];
                let dn = row.dn && row.u == u;
                let ybar: f64 = buf.iter().sum();
                sum_y += ybar;
                if dn {
                    sum_dn += ybar;
                }
                for (s, b) in s_j.iter_mut().zip(&buf) {
                    *s += b;
                }
                at_risk.push(i);
                om.extend_from_slice(&buf);
            }
            if sum_y <= 0.0 {
                dropped += 1;
                continue;
            }
            let dl = sum_dn / sum_y;
            dlambda0[gi] = dl;
            let q: Vec<f64> = s_j.iter().map(|s| s / sum_y).collect();
            qhat[gi * d..(gi + 1) * d].copy_from_slice(&q);
            let ybar_mean = sum_y / n as f64;
            mean_ybar[gi] = ybar_mean;
            for (r, &i) in at_risk.iter().enumerate() {
                let row = &weights.rows[i];
                let dn = if row.dn && row.u == u { 1.0 } else { 0.0 };
                let dm = dn - dl;
                let w = &om[r * d..(r + 1) * d];
                let ybar: f64 = w.iter().sum();
                for j in 0..p {
                    let a = w[j] - q[j] * ybar;
                    iid[(i, j)] += a * dm;
                    g[(i, j)] += a * ybar * dm / ybar_mean;
                    score[j] += w[j] * dm;
                }
            }
        }
        LogrankPass {
            grid: grid.to_vec(),
            dlambda0,
            qhat,
            mean_ybar,
            dropped,
            score,
            iid,
            g,
        }
    }

    pub fn n_regimes(&self) -> usize {
        if self.grid.is_empty() {
            0
        } else {
            self.qhat.len() / self.grid.len()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardIncrements {
    pub values: Vec<f64>,
    pub dropped: usize,
}

/// dLambda0-hat(u) on `grid`.
pub fn baseline_hazard(weights: &WeightTable, grid: &[f64]) -> HazardIncrements {
    let pass = LogrankPass::compute(weights, grid);
    HazardIncrements {
        values: pass.dlambda0,
        dropped: pass.dropped,
    }
}

/// q-hat(u, d^j); 0 when the weighted risk set is empty.
pub fn qhat(weights: &WeightTable, j: usize, u: f64) -> f64 {
    let d = weights.n_regimes;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..weights.n_subjects() {
        for jj in 0..d {
            let w = weights.omega(i, jj, u);
            den += w;
            if jj == j {
                num += w;
            }
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// How the truncation time L is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Fixed(f64),
    AtRiskFraction(f64),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::AtRiskFraction(DEFAULT_AT_RISK_FRACTION)
    }
}

impl Truncation {
    pub fn resolve(&self, cohort: &Cohort) -> f64 {
        match *self {
            Truncation::Fixed(l) => l,
            Truncation::AtRiskFraction(f) => truncation_time(cohort, f),
        }
    }
}

pub fn check_regimes(cohort: &Cohort, regimes: &[Regime]) -> Result<()> {
    if regimes.len() < 2 {
        return Err(Error::Config("at least two regimes are required".into()));
    }
    for r in regimes {
        if r.stage_count() != cohort.design().stages() {
            return Err(Error::StageCount {
                expected: cohort.design().stages(),
                found: r.stage_count(),
            });
        }
    }
    Ok(())
}

/// Runs the full grid pass for `regimes` up to `l`.
pub fn logrank_pass(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity, l: f64) -> Result<LogrankPass> {
    let grid = event_grid(cohort, l)?;
    let weights = WeightTable::build(cohort, regimes, prop)?;
    Ok(LogrankPass::compute(&weights, &grid))
}

/// The (D - 1)-vector of weighted observed-minus-expected sums; the last
/// regime is the reference.
pub fn score_statistic(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity, l: f64) -> Result<DVector<f64>> {
    check_regimes(cohort, regimes)?;
    Ok(logrank_pass(cohort, regimes, prop, l)?.score)
}

pub fn iid_terms(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity, l: f64) -> Result<DMatrix<f64>> {
    check_regimes(cohort, regimes)?;
    Ok(logrank_pass(cohort, regimes, prop, l)?.iid)
}

/// n^{-1} sum_i T_i T_i^T.
pub fn covariance(iid: &DMatrix<f64>) -> DMatrix<f64> {
    mean_outer(iid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantKind {
    /// Known probabilities, no projection.
    Plain,
    /// Estimated probabilities, no projection.
    EstimatedGamma,
    /// Residualized on score (and basis) columns.
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub kind: VariantKind,
    pub corrected: bool,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let k = match self.kind {
            VariantKind::Plain => "plain",
            VariantKind::EstimatedGamma => "estimated-gamma",
            VariantKind::Augmented => "augmented",
        };
        if self.corrected {
            write!(f, "{k}+corrected")
        } else {
            f.write_str(k)
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (base, corrected) = match s.strip_suffix("+corrected") {
            Some(b) => (b, true),
            None => (s.as_str(), false),
        };
        let kind = match base {
            "plain" => VariantKind::Plain,
            "estimated-gamma" => VariantKind::EstimatedGamma,
            "augmented" => VariantKind::Augmented,
            other => return Err(serde::de::Error::custom(format!("unknown variant {other}"))),
        };
        Ok(Variant { kind, corrected })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warnings {
    pub dropped_grid_points: usize,
    #[serde(default)]
    pub negative_eigenvalues: usize,
    #[serde(default)]
    pub rank_deficient_design: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub nu: usize,
    pub p_value: f64,
    pub variant: Variant,
    /// Components of the (possibly residualized) score vector.
    pub components: Vec<f64>,
    pub rank_tolerance: f64,
    #[serde(rename = "L")]
    pub truncation: f64,
    pub warnings: Warnings,
    pub n: usize,
    pub regimes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub truncation: Truncation,
    pub correction: bool,
    pub rank_tolerance: f64,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            truncation: Truncation::default(),
            correction: true,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
        }
    }
}

/// Statistic, rank and p-value from per-subject terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chi2Outcome {
    pub statistic: f64,
    pub nu: usize,
    pub p_value: f64,
    pub negative_eigenvalues: usize,
}

/// n^{-1} T^T Sigma^- T with T the column sums of `terms` and Sigma their
/// mean outer product, optionally bias corrected with `g`.
pub fn chi2_from_terms(terms: &DMatrix<f64>, g: Option<&DMatrix<f64>>, tol: f64) -> Result<Chi2Outcome> {
    let n = terms.nrows();
    let total = column_sums(terms);
    let mut sigma = covariance(terms);
    if let Some(g) = g {
        sigma = corrected_covariance(&sigma, terms, g, n);
    }
    let pinv = pinv_rank(&sigma, tol)?;
    let statistic = (quad_form(&pinv.inverse, &total) / n as f64).max(0.0);
    Ok(Chi2Outcome {
        statistic,
        nu: pinv.rank,
        p_value: chi2_sf(statistic, pinv.rank),
        negative_eigenvalues: pinv.negative_eigenvalues,
    })
}

/// Generalized logrank test without projection. The variant is `plain` for
/// known probabilities and `estimated-gamma` otherwise.
pub fn run_test(cohort: &Cohort, regimes: &[Regime], prop: &FittedPropensity, options: &TestOptions) -> Result<TestResult> {
    check_regimes(cohort, regimes)?;
    let l = options.truncation.resolve(cohort);
    let pass = logrank_pass(cohort, regimes, prop, l)?;
    let out = chi2_from_terms(
        &pass.iid,
        options.correction.then_some(&pass.g),
        options.rank_tolerance,
    )?;
    let kind = if prop.mode() == PropensityMode::Known {
        VariantKind::Plain
    } else {
        VariantKind::EstimatedGamma
    };
    Ok(TestResult {
        statistic: out.statistic,
        nu: out.nu,
        p_value: out.p_value,
        variant: Variant {
            kind,
            corrected: options.correction,
        },
        components: pass.score.iter().copied().collect(),
        rank_tolerance: options.rank_tolerance,
        truncation: l,
        warnings: Warnings {
            dropped_grid_points: pass.dropped,
            negative_eigenvalues: out.negative_eigenvalues,
            rank_deficient_design: false,
        },
        n: cohort.len(),
        regimes: regimes.iter().map(|r| r.label.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub label: String,
    /// Leading 0 followed by the grid times.
    pub times: Vec<f64>,
    pub cumhaz: Vec<f64>,
    pub survival: Vec<f64>,
    pub dropped: usize,
}

impl SurvivalCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "cumhaz", "survival"])?;
        for ((t, h), s) in self.times.iter().zip(&self.cumhaz).zip(&self.survival) {
            wr.write_record([t.to_string(), h.to_string(), s.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Weighted Nelson-Aalen estimate of the cumulative hazard under `regime`.
pub fn regime_cumhaz(cohort: &Cohort, regime: &Regime, prop: &FittedPropensity, grid: &[f64]) -> Result<SurvivalCurve> {
    let weights = WeightTable::build(cohort, std::slice::from_ref(regime), prop)?;
    let mut times = vec![0.0];
    let mut cumhaz = vec![0.0];
    let mut total = 0.0;
    let mut dropped = 0;
    for &u in grid {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, s) in cohort.subjects().iter().enumerate() {
            let (dn, y) = counting_views(s, u);
            if y == 0.0 {
                continue;
            }
            let w = weights.omega(i, 0, u);
            num += w * dn;
            den += w;
        }
        if den > 0.0 {
            total += num / den;
        } else {
            dropped += 1;
        }
        times.push(u);
        cumhaz.push(total);
    }
    let survival = cumhaz.iter().map(|h| (-h).exp()).collect();
    Ok(SurvivalCurve {
        label: regime.label.clone(),
        times,
        cumhaz,
        survival,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::{parse_regime, SmartDesign};
    use std::collections::BTreeMap;

    fn one_stage(rows: &[(u32, f64, bool)]) -> Cohort {
        let d = SmartDesign::new(vec![vec![0, 1]], vec![]).unwrap();
        let subjects = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, u, delta))| SubjectRecord {
                id: format!("s{i}"),
                kappa: 1,
                decision_times: vec![0.0],
                treatments: vec![a],
                covariates: BTreeMap::new(),
                u,
                delta,
            })
            .collect();
        Cohort::new(d, subjects).unwrap()
    }

    fn arms(c: &Cohort) -> Vec<Regime> {
        vec![
            parse_regime("stage1: 1", c.design()).unwrap().with_label("arm1"),
            parse_regime("stage1: 0", c.design()).unwrap().with_label("arm0"),
        ]
    }

    #[test]
    fn single_subject_mass() {
        let c = one_stage(&[(1, 2.0, true)]);
        let d = SmartDesign::new(vec![vec![1]], vec![]).unwrap();
        let c = Cohort::new(d, c.subjects().to_vec()).unwrap();
        let r = vec![parse_regime("stage1: 1", c.design()).unwrap()];
        let w = WeightTable::build(&c, &r, &FittedPropensity::uniform(c.design())).unwrap();
        assert_eq!(baseline_hazard(&w, &[2.0]).values, vec![1.0]);
    }

    #[test]
    fn qhat_ratio() {
        // three on arm 1 and one on arm 0 at risk at u = 1
        let c = one_stage(&[(1, 2.0, true), (1, 3.0, true), (1, 4.0, true), (0, 5.0, true)]);
        let w = WeightTable::build(&c, &arms(&c), &FittedPropensity::uniform(c.design())).unwrap();
        assert!((qhat(&w, 0, 1.0) - 0.75).abs() < 1e-15);
        assert!((qhat(&w, 1, 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identical_regimes_zero_score_and_error() {
        let c = one_stage(&[(1, 2.0, true), (0, 3.0, true), (1, 4.0, false), (0, 5.0, true)]);
        let r = vec![
            parse_regime("stage1: 1", c.design()).unwrap(),
            parse_regime("stage1: 1", c.design()).unwrap(),
        ];
        let prop = FittedPropensity::uniform(c.design());
        let t = score_statistic(&c, &r, &prop, 10.0).unwrap();
        assert_eq!(t[0], 0.0);
        let e = run_test(&c, &r, &prop, &TestOptions::default()).unwrap_err();
        assert!(matches!(e, Error::AllZeroMatrix));
    }

    #[test]
    fn empty_grid_gives_zero_terms() {
        let c = one_stage(&[(1, 2.0, false), (0, 3.0, false)]);
        let w = WeightTable::build(&c, &arms(&c), &FittedPropensity::uniform(c.design())).unwrap();
        let pass = LogrankPass::compute(&w, &[]);
        assert!(pass.iid.iter().all(|&x| x == 0.0));
        assert!(pass.g.iter().all(|&x| x == 0.0));
        assert!(matches!(
            iid_terms(&c, &arms(&c), &FittedPropensity::uniform(c.design()), 10.0),
            Err(Error::EmptyGrid(_))
        ));
    }

    #[test]
    fn two_subject_iid_by_hand() {
        // subject 0 on arm 1 dies at 1; subject 1 on arm 0 dies at 2.
        let c = one_stage(&[(1, 1.0, true), (0, 2.0, true)]);
        let prop = FittedPropensity::uniform(c.design());
        let iid = iid_terms(&c, &arms(&c), &prop, 5.0).unwrap();
        // u = 1: Omega = (2, 0) and (0, 2); dL = 2/4; q1 = 1/2.
        // subject 0: A = 2 - 0.5*2 = 1, dM = 1 - 0.5 -> 0.5
        // subject 1: A = 0 - 0.5*2 = -1, dM = -0.5 -> 0.5
        // u = 2: only subject 1, Omega = (0, 2); dL = 1; q1 = 0; A = 0.
        assert!((iid[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((iid[(1, 0)] - 0.5).abs() < 1e-15);
        let t = score_statistic(&c, &arms(&c), &prop, 5.0).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-15);
        let s = covariance(&iid);
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn single_arm_nelson_aalen() {
        let c = one_stage(&[(1, 1.0, true), (1, 2.0, false), (1, 3.0, true), (1, 3.0, true), (0, 9.0, true)]);
        let r = parse_regime("stage1: 1", c.design()).unwrap();
        let curve = regime_cumhaz(&c, &r, &FittedPropensity::uniform(c.design()), &[1.0, 3.0]).unwrap();
        assert_eq!(curve.times, vec![0.0, 1.0, 3.0]);
        let expect = [0.0, 0.25, 0.25 + 1.0];
        for (a, b) in curve.cumhaz.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(curve.survival[0], 1.0);
    }

    #[test]
    fn variant_strings() {
        let v = Variant {
            kind: VariantKind::Augmented,
            corrected: true,
        };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "\"augmented+corrected\"");
        assert_eq!(serde_json::from_str::<Variant>(&s).unwrap(), v);
    }
}
