//! Treatment-assignment probability models and their ML score vectors.
//!
//! Each stratum lists its options with the first one as the reference
//! category. A saturated stratum with `m` options carries `m - 1`
//! parameters `log(p_j / p_0)`; a logistic stratum is binary and models
//! the probability of the second option.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectRecord};
use crate::error::{Error, Result};
use crate::regime::{SmartDesign, Treatment};

pub const INTERCEPT: &str = "1";
pub const MIN_PROB: f64 = 1e-6;

const MAX_NEWTON_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 15.0;

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Column lists keyed by stage, either shared by every stratum of the stage
/// or given per stratum name. Keys may be written `"2"` or `"stage2"`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StageColumns(pub BTreeMap<String, StageEntry>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageEntry {
    All(Vec<String>),
    ByStratum(BTreeMap<String, Vec<String>>),
}

impl StageColumns {
    pub fn is_empty(&self) -> bool {
        self.0.values().all(|e| match e {
            StageEntry::All(v) => v.is_empty(),
            StageEntry::ByStratum(m) => m.values().all(|v| v.is_empty()),
        })
    }

    fn stage_of_key(key: &str) -> Option<usize> {
        key.strip_prefix("stage").unwrap_or(key).parse().ok()
    }

    /// Checks stage keys, stratum names and column availability.
    /// `allow_intercept` admits the `"1"` column.
    pub fn validate(&self, design: &SmartDesign, allow_intercept: bool) -> Result<()> {
        for (key, entry) in &self.0 {
            let stage = Self::stage_of_key(key)
                .filter(|&k| k >= 1 && k <= design.stages())
                .ok_or_else(|| Error::Config(format!("unknown stage key {key:?}")))?;
            let lists: Vec<(&str, &Vec<String>)> = match entry {
                StageEntry::All(v) => vec![("", v)],
                StageEntry::ByStratum(m) => {
                    for name in m.keys() {
                        if !design.strata(stage).iter().any(|s| &s.name == name) {
                            return Err(Error::Config(format!(
                                "stage {stage} has no stratum named {name:?}"
                            )));
                        }
                    }
                    m.iter().map(|(k, v)| (k.as_str(), v)).collect()
                }
            };
            for (_, cols) in lists {
                for c in cols {
                    if c == INTERCEPT {
                        if !allow_intercept {
                            return Err(Error::Config("basis columns take no intercept".into()));
                        }
                        continue;
                    }
                    match design.covariate_stage(c) {
                        Some(s) if s <= stage => {}
                        Some(s) => {
                            return Err(Error::Config(format!(
                                "column {c} belongs to stage {s}, after stage {stage}"
                            )))
                        }
                        None => return Err(Error::Config(format!("unknown column {c}"))),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn columns(&self, stage: usize, stratum: &str) -> Option<&[String]> {
        self.0
            .iter()
            .filter(|(k, _)| Self::stage_of_key(k) == Some(stage))
            .find_map(|(_, e)| match e {
                StageEntry::All(v) => Some(v.as_slice()),
                StageEntry::ByStratum(m) => m.get(stratum).map(|v| v.as_slice()),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PropensitySpec {
    /// Probabilities per stratum, strata enumerated stage by stage.
    Known { values: Vec<Vec<f64>> },
    #[default]
    Saturated,
    Logistic {
        #[serde(default)]
        stage_formulas: StageColumns,
    },
}


impl PropensitySpec {
    pub fn is_estimated(&self) -> bool {
        !matches!(self, PropensitySpec::Known { .. })
    }

    pub fn validate(&self, design: &SmartDesign) -> Result<()> {
        match self {
            PropensitySpec::Known { values } => {
                let strata: Vec<_> = (1..=design.stages()).flat_map(|k| design.strata(k)).collect();
                if values.len() != strata.len() {
                    return Err(Error::Config(format!(
                        "propensity.values has {} entries but the design has {} strata",
                        values.len(),
                        strata.len()
                    )));
                }
                for (v, s) in values.iter().zip(strata) {
                    if v.len() != s.options.len() {
                        return Err(Error::Config(format!(
                            "propensity.values for stratum {} needs {} probabilities",
                            s.name,
                            s.options.len()
                        )));
                    }
                    let sum: f64 = v.iter().sum();
                    if v.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::Config(format!(
                            "propensity.values for stratum {} must be probabilities summing to 1",
                            s.name
                        )));
                    }
                }
                Ok(())
            }
            PropensitySpec::Saturated => Ok(()),
            PropensitySpec::Logistic { stage_formulas } => stage_formulas.validate(design, true),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityMode {
    Known,
    Saturated,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StratumModel {
    /// Constant probabilities, no parameters.
    Fixed(Vec<f64>),
    /// Per-option proportions with `m - 1` baseline-category logits.
    Saturated(Vec<f64>),
    /// Binary logistic model for the second option.
    Logistic { features: Vec<String>, coef: Vec<f64> },
}

impl StratumModel {
    pub fn n_params(&self) -> usize {
        match self {
            StratumModel::Fixed(_) => 0,
            StratumModel::Saturated(p) => p.len() - 1,
            StratumModel::Logistic { coef, .. } => coef.len(),
        }
    }
}

fn feature_value(subject: &SubjectRecord, name: &str) -> f64 {
    if name == INTERCEPT {
        1.0
    } else {
        subject.covariates.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedPropensity {
    design: SmartDesign,
    mode: PropensityMode,
    models: Vec<Vec<StratumModel>>,
    offsets: Vec<Vec<usize>>,
    gamma_hat: Vec<f64>,
}

impl FittedPropensity {
    fn assemble(design: &SmartDesign, mode: PropensityMode, models: Vec<Vec<StratumModel>>) -> Self {
        let mut offsets = Vec::with_capacity(models.len());
        let mut gamma_hat = Vec::new();
        for stage in &models {
            let mut off = Vec::with_capacity(stage.len());
            for m in stage {
                off.push(gamma_hat.len());
                match m {
                    StratumModel::Fixed(_) => {}
                    StratumModel::Saturated(p) => {
                        gamma_hat.extend(p[1..].iter().map(|pj| (pj / p[0]).ln()))
                    }
                    StratumModel::Logistic { coef, .. } => gamma_hat.extend(coef),
                }
            }
            offsets.push(off);
        }
        FittedPropensity {
            design: design.clone(),
            mode,
            models,
            offsets,
            gamma_hat,
        }
    }

    /// Known randomization probabilities, strata enumerated stage by stage.
    pub fn known(design: &SmartDesign, values: &[Vec<f64>]) -> Result<Self> {
        PropensitySpec::Known {
            values: values.to_vec(),
        }
        .validate(design)?;
        let mut it = values.iter();
        let models = (1..=design.stages())
            .map(|k| {
                design
                    .strata(k)
                    .iter()
                    .map(|_| StratumModel::Fixed(it.next().unwrap().clone()))
                    .collect()
            })
            .collect();
        Ok(Self::assemble(design, PropensityMode::Known, models))
    }

    /// Equal probability over each stratum's options.
    pub fn uniform(design: &SmartDesign) -> Self {
        let values: Vec<Vec<f64>> = (1..=design.stages())
            .flat_map(|k| design.strata(k))
            .map(|s| vec![1.0 / s.options.len() as f64; s.options.len()])
            .collect();
        Self::known(design, &values).expect("uniform probabilities are valid")
    }

    pub fn mode(&self) -> PropensityMode {
        self.mode
    }

    pub fn design(&self) -> &SmartDesign {
        &self.design
    }

    pub fn gamma_hat(&self) -> &[f64] {
        &self.gamma_hat
    }

    pub fn score_dim(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn model(&self, stage: usize, stratum: usize) -> &StratumModel {
        &self.models[stage - 1][stratum]
    }

    fn option_probabilities(&self, subject: &SubjectRecord, stage: usize, stratum: usize) -> Vec<f64> {
        match &self.models[stage - 1][stratum] {
            StratumModel::Fixed(p) | StratumModel::Saturated(p) => p.clone(),
            StratumModel::Logistic { features, coef } => {
                let eta: f64 = features
                    .iter()
                    .zip(coef)
                    .map(|(f, c)| feature_value(subject, f) * c)
                    .sum();
                let p1 = expit(eta);
                vec![1.0 - p1, p1]
            }
        }
    }

    /// omega_k(H_k, option) for a subject that reached decision `stage`.
    /// Returns 0 for options outside the matched stratum.
    pub fn predict(&self, subject: &SubjectRecord, stage: usize, option: Treatment) -> f64 {
        if stage > subject.kappa {
            return 0.0;
        }
        match self.design.match_stratum(stage, &subject.history(stage)) {
            Some(s) => self.predict_in_stratum(subject, stage, s, option),
            None => 0.0,
        }
    }

    pub fn predict_in_stratum(&self, subject: &SubjectRecord, stage: usize, stratum: usize, option: Treatment) -> f64 {
        let opts = &self.design.strata(stage)[stratum].options;
        match opts.iter().position(|&o| o == option) {
            Some(j) => self.option_probabilities(subject, stage, stratum)[j],
            None => 0.0,
        }
    }

    /// Indicator-minus-probability residuals for the non-reference options
    /// of the stratum matched at `stage`.
    pub fn stratum_residuals(&self, subject: &SubjectRecord, stage: usize, stratum: usize) -> Vec<f64> {
        let opts = &self.design.strata(stage)[stratum].options;
        let probs = self.option_probabilities(subject, stage, stratum);
        let a = subject.treatment(stage);
        opts.iter()
            .zip(&probs)
            .skip(1)
            .map(|(&o, &p)| (o == a) as u8 as f64 - p)
            .collect()
    }

    /// Offset of a stratum's parameter block in gamma.
    pub fn offset(&self, stage: usize, stratum: usize) -> usize {
        self.offsets[stage - 1][stratum]
    }

    /// Per-subject ML score at gamma-hat; unreached stages contribute zeros.
    pub fn score_vector(&self, subject: &SubjectRecord) -> Vec<f64> {
        let mut out = vec![0.0; self.score_dim()];
        for k in 1..=subject.kappa {
            let Some(s) = self.design.match_stratum(k, &subject.history(k)) else {
                continue;
            };
            self.write_score_block(subject, k, s, &mut out);
        }
        out
    }

    pub(crate) fn write_score_block(&self, subject: &SubjectRecord, k: usize, s: usize, out: &mut [f64]) {
        let off = self.offsets[k - 1][s];
        match &self.models[k - 1][s] {
            StratumModel::Fixed(_) => {}
            StratumModel::Saturated(_) => {
                for (j, e) in self.stratum_residuals(subject, k, s).into_iter().enumerate() {
                    out[off + j] = e;
                }
            }
            StratumModel::Logistic { features, .. } => {
                let e = self.stratum_residuals(subject, k, s)[0];
                for (j, f) in features.iter().enumerate() {
                    out[off + j] = e * feature_value(subject, f);
                }
            }
        }
    }
}

/// Fit the model named by `spec`.
pub fn fit_propensity(cohort: &Cohort, spec: &PropensitySpec) -> Result<FittedPropensity> {
    spec.validate(cohort.design())?;
    match spec {
        PropensitySpec::Known { values } => FittedPropensity::known(cohort.design(), values),
        PropensitySpec::Saturated => fit_saturated(cohort),
        PropensitySpec::Logistic { stage_formulas } => fit_logistic(cohort, stage_formulas),
    }
}

fn stratum_counts(cohort: &Cohort, stage: usize, stratum: usize) -> Vec<usize> {
    let opts = &cohort.design().strata(stage)[stratum].options;
    let mut counts = vec![0usize; opts.len()];
    for (i, s) in cohort.subjects().iter().enumerate() {
        if cohort.stratum(i, stage) == Some(stratum) {
            let j = opts.iter().position(|&o| o == s.treatment(stage)).expect("validated");
            counts[j] += 1;
        }
    }
    counts
}

fn saturated_model(cohort: &Cohort, stage: usize, stratum: usize) -> Result<StratumModel> {
    let st = &cohort.design().strata(stage)[stratum];
    if st.options.len() == 1 {
        return Ok(StratumModel::Fixed(vec![1.0]));
    }
    let counts = stratum_counts(cohort, stage, stratum);
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyStratum(st.name.clone()));
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateStratum {
            stratum: st.name.clone(),
            option: st.options[j],
        });
    }
    Ok(StratumModel::Saturated(
        counts.iter().map(|&c| c as f64 / total as f64).collect(),
    ))
}

/// Stratum sample proportions.
pub fn fit_saturated(cohort: &Cohort) -> Result<FittedPropensity> {
    let d = cohort.design();
    let models = (1..=d.stages())
        .map(|k| (0..d.strata(k).len()).map(|s| saturated_model(cohort, k, s)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    Ok(FittedPropensity::assemble(d, PropensityMode::Saturated, models))
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub coef: Vec<f64>,
    pub iterations: usize,
    /// Log-likelihood after each accepted step, starting at gamma = 0.
    pub loglik_path: Vec<f64>,
}

fn loglik(x: &DMatrix<f64>, y: &[f64], g: &DVector<f64>) -> f64 {
    let eta = x * g;
    eta.iter().zip(y).map(|(&e, &yi)| yi * e - softplus(e)).sum()
}

/// Damped Newton-Raphson for a binary logistic regression without offset.
pub fn logistic_regression(x: &DMatrix<f64>, y: &[f64], label: &str) -> Result<LogisticFit> {
    let p = x.ncols();
    let mut g = DVector::zeros(p);
    let mut ll = loglik(x, y, &g);
    let mut path = vec![ll];
    for iter in 0..=MAX_NEWTON_ITER {
        let eta = x * &g;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        for (i, row) in x.row_iter().enumerate() {
            let pi = expit(eta[i]);
            score += row.transpose() * (y[i] - pi);
            info += row.transpose() * row * (pi * (1.0 - pi));
        }
        if score.amax() < SCORE_TOL {
            return Ok(LogisticFit {
                coef: g.iter().copied().collect(),
                iterations: iter,
                loglik_path: path,
            });
        }
        if iter == MAX_NEWTON_ITER {
            break;
        }
        // a singular information matrix after the first step means the
        // likelihood is running off to infinity
        let chol = info.cholesky().ok_or_else(|| {
            if iter == 0 {
                Error::RankDeficient(label.to_string())
            } else {
                Error::SeparationDetected(label.to_string())
            }
        })?;
        let delta = chol.solve(&score);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &g + &delta * step;
            let cand_ll = loglik(x, y, &cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                g = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if g.amax() > SEPARATION_BOUND {
            return Err(Error::SeparationDetected(label.to_string()));
        }
        if !accepted {
            break;
        }
        path.push(ll);
    }
    Err(Error::NonConvergence {
        stratum: label.to_string(),
        iterations: MAX_NEWTON_ITER,
    })
}

/// Per-stratum logistic regressions on the declared columns; strata
/// without a formula get an intercept-only model.
pub fn fit_logistic(cohort: &Cohort, formulas: &StageColumns) -> Result<FittedPropensity> {
    let d = cohort.design();
    formulas.validate(d, true)?;
    let mut models = Vec::with_capacity(d.stages());
    for k in 1..=d.stages() {
        let mut stage_models = Vec::new();
        for (s, st) in d.strata(k).iter().enumerate() {
            let features: Vec<String> = formulas
                .columns(k, &st.name)
                .map(|c| c.to_vec())
                .unwrap_or_else(|| vec![INTERCEPT.to_string()]);
            let model = match st.options.len() {
                1 => StratumModel::Fixed(vec![1.0]),
                2 => {
                    let rows: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.stratum(i, k) == Some(s)).collect();
                    if rows.is_empty() {
                        return Err(Error::EmptyStratum(st.name.clone()));
                    }
                    let x = DMatrix::from_fn(rows.len(), features.len(), |r, c| {
                        feature_value(&cohort.subjects()[rows[r]], &features[c])
                    });
                    let y: Vec<f64> = rows
                        .iter()
                        .map(|&i| (cohort.subjects()[i].treatment(k) == st.options[1]) as u8 as f64)
                        .collect();
                    let fit = logistic_regression(&x, &y, &st.name)?;
                    StratumModel::Logistic {
                        features,
                        coef: fit.coef,
                    }
                }
                _ if features == [INTERCEPT] => saturated_model(cohort, k, s)?,
                _ => {
                    return Err(Error::Config(format!(
                        "stratum {} has more than two options; only intercept-only models are supported",
                        st.name
                    )))
                }
            };
            stage_models.push(model);
        }
        models.push(stage_models);
    }
    Ok(FittedPropensity::assemble(d, PropensityMode::Logistic, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::CovariateColumn;

    fn subject(id: usize, a: Vec<Treatment>, covs: &[(&str, f64)]) -> SubjectRecord {
        let kappa = a.len();
        SubjectRecord {
            id: format!("s{id}"),
            kappa,
            decision_times: (0..kappa).map(|k| k as f64).collect(),
            treatments: a,
            covariates: covs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            u: 10.0,
            delta: true,
        }
    }

    fn one_stage(arms: &[(Treatment, f64)]) -> Cohort {
        let d = SmartDesign::new(
            vec![vec![0, 1]],
            vec![CovariateColumn { name: "x".into(), stage: 1 }],
        )
        .unwrap();
        let subjects = arms
            .iter()
            .enumerate()
            .map(|(i, &(a, x))| subject(i, vec![a], &[("x", x)]))
            .collect();
        Cohort::new(d, subjects).unwrap()
    }

    #[test]
    fn saturated_proportion() {
        let arms: Vec<(Treatment, f64)> = (0..10).map(|i| ((i < 7) as Treatment, 0.0)).collect();
        let f = fit_saturated(&one_stage(&arms)).unwrap();
        let s = &f.design().strata(1)[0];
        assert_eq!(s.options, vec![0, 1]);
        let any = subject(99, vec![1], &[("x", 0.0)]);
        assert!((f.predict(&any, 1, 1) - 0.7).abs() < 1e-15);
        assert!((f.gamma_hat()[0] - (0.7f64 / 0.3).ln()).abs() < 1e-14);
    }

    #[test]
    fn symmetric_arms_zero_gamma() {
        let arms: Vec<(Treatment, f64)> = (0..8).map(|i| ((i % 2) as Treatment, 0.0)).collect();
        let f = fit_saturated(&one_stage(&arms)).unwrap();
        assert_eq!(f.gamma_hat(), &[0.0]);
    }

    #[test]
    fn degenerate_stratum() {
        let arms: Vec<(Treatment, f64)> = (0..5).map(|_| (1, 0.0)).collect();
        assert!(matches!(
            fit_saturated(&one_stage(&arms)),
            Err(Error::DegenerateStratum { option: 0, .. })
        ));
    }

    #[test]
    fn intercept_only_logistic_matches_saturated() {
        let arms: Vec<(Treatment, f64)> = (0..13).map(|i| ((i % 3 == 0) as Treatment, 0.0)).collect();
        let c = one_stage(&arms);
        let sat = fit_saturated(&c).unwrap();
        let log = fit_logistic(&c, &StageColumns::default()).unwrap();
        assert!((sat.gamma_hat()[0] - log.gamma_hat()[0]).abs() < 1e-10);
    }

    #[test]
    fn two_by_two_log_odds() {
        // x = 0: 3 of 10 treated; x = 1: 6 of 8 treated
        let mut arms = Vec::new();
        arms.extend((0..10).map(|i| ((i < 3) as Treatment, 0.0)));
        arms.extend((0..8).map(|i| ((i < 6) as Treatment, 1.0)));
        let c = one_stage(&arms);
        let spec: StageColumns = serde_json::from_str(r#"{"1": ["1", "x"]}"#).unwrap();
        let f = fit_logistic(&c, &spec).unwrap();
        let l0 = (3.0f64 / 7.0).ln();
        let l1 = (6.0f64 / 2.0).ln();
        assert!((f.gamma_hat()[0] - l0).abs() < 1e-9);
        assert!((f.gamma_hat()[1] - (l1 - l0)).abs() < 1e-9);
        let total: Vec<f64> = c.subjects().iter().map(|s| f.score_vector(s)).fold(vec![0.0; 2], |acc, v| {
            acc.iter().zip(&v).map(|(a, b)| a + b).collect()
        });
        assert!(total.iter().all(|t| t.abs() < 1e-8));
    }

    #[test]
    fn separation_detected() {
        let arms: Vec<(Treatment, f64)> = (0..20).map(|i| ((i >= 10) as Treatment, (i >= 10) as u8 as f64)).collect();
        let spec: StageColumns = serde_json::from_str(r#"{"1": ["1", "x"]}"#).unwrap();
        assert!(matches!(
            fit_logistic(&one_stage(&arms), &spec),
            Err(Error::SeparationDetected(_))
        ));
    }

    #[test]
    fn newton_loglik_monotone() {
        let x = DMatrix::from_fn(40, 2, |r, c| if c == 0 { 1.0 } else { (r as f64 * 0.37).sin() * 3.0 });
        let y: Vec<f64> = (0..40).map(|r| ((r * 7) % 5 < 2) as u8 as f64).collect();
        let fit = logistic_regression(&x, &y, "t").unwrap();
        assert!(fit.loglik_path.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn known_mode_constants() {
        let c = one_stage(&[(0, 0.0), (1, 0.0)]);
        let f = fit_propensity(&c, &PropensitySpec::Known { values: vec![vec![0.25, 0.75]] }).unwrap();
        assert_eq!(f.score_dim(), 0);
        assert_eq!(f.predict(&c.subjects()[0], 1, 0), 0.25);
        assert_eq!(f.predict(&c.subjects()[0], 1, 1), 0.75);
        assert!(fit_propensity(&c, &PropensitySpec::Known { values: vec![vec![0.2, 0.7]] }).is_err());
    }

    #[test]
    fn spec_json_forms() {
        let s: PropensitySpec = serde_json::from_str(r#"{"mode":"saturated"}"#).unwrap();
        assert_eq!(s, PropensitySpec::Saturated);
        let s: PropensitySpec = serde_json::from_str(r#"{"mode":"known","values":[[0.5,0.5]]}"#).unwrap();
        assert!(matches!(s, PropensitySpec::Known { .. }));
        let s: PropensitySpec = serde_json::from_str(
            r#"{"mode":"logistic","stage_formulas":{"1":["1","x11"],"2":{"stratumA":["1","x11","x2"]}}}"#,
        )
        .unwrap();
        match s {
            PropensitySpec::Logistic { stage_formulas } => {
                assert_eq!(stage_formulas.columns(2, "stratumA").unwrap().len(), 3);
                assert_eq!(stage_formulas.columns(1, "anything").unwrap(), ["1", "x11"]);
            }
            _ => panic!(),
        }
    }
}
