//! JSON analysis configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augmentation::{run_augmented_test, BasisSpec};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::linalg::DEFAULT_RANK_TOLERANCE;
use crate::logrank::{run_test, TestOptions, TestResult, Truncation, DEFAULT_AT_RISK_FRACTION};
use crate::propensity::{fit_propensity, PropensitySpec};
use crate::regime::{parse_condition, parse_regime, CovariateColumn, Regime, SmartDesign, Stratum};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumSpec {
    pub name: String,
    #[serde(default = "always")]
    pub condition: String,
    pub options: Vec<u32>,
}

fn always() -> String {
    "true".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub options: Vec<u32>,
    /// Empty means a single stratum holding every option.
    #[serde(default)]
    pub strata: Vec<StratumSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub covariates: Vec<CovariateColumn>,
}

impl DesignSpec {
    pub fn build(&self) -> Result<SmartDesign> {
        let mut design = SmartDesign::new(
            self.stages.iter().map(|s| s.options.clone()).collect(),
            self.covariates.clone(),
        )?;
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.strata.is_empty() {
                continue;
            }
            let mut strata = Vec::with_capacity(stage.strata.len());
            for s in &stage.strata {
                strata.push(Stratum {
                    name: s.name.clone(),
                    condition: parse_condition(&s.condition, &design, k + 1)?,
                    options: s.options.clone(),
                });
            }
            design.set_strata(k + 1, strata)?;
        }
        Ok(design)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegimeEntry {
    Rule(String),
    Labeled { label: String, rule: String },
}

impl RegimeEntry {
    pub fn rule(&self) -> &str {
        match self {
            RegimeEntry::Rule(r) | RegimeEntry::Labeled { rule: r, .. } => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub design: DesignSpec,
    pub regimes: Vec<RegimeEntry>,
    /// Indices into `regimes`; all of them when absent.
    #[serde(default)]
    pub regime_set: Option<Vec<usize>>,
    #[serde(default)]
    pub propensity: PropensitySpec,
    #[serde(default)]
    pub basis: BasisSpec,
    /// Fixed truncation time; overrides `at_risk_fraction`.
    #[serde(default, rename = "L")]
    pub l: Option<f64>,
    #[serde(default = "default_fraction")]
    pub at_risk_fraction: f64,
    #[serde(default = "yes")]
    pub correction: bool,
    /// Residualize on score and basis columns when any exist.
    #[serde(default = "yes")]
    pub augment: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tolerance")]
    pub rank_tolerance: f64,
}

fn default_fraction() -> f64 {
    DEFAULT_AT_RISK_FRACTION
}

fn yes() -> bool {
    true
}

fn default_alpha() -> f64 {
    0.05
}

fn default_tolerance() -> f64 {
    DEFAULT_RANK_TOLERANCE
}

pub fn parse_config_str(text: &str) -> Result<AnalysisConfig> {
    let cfg: AnalysisConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<AnalysisConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        let design = self.design()?;
        self.all_regimes(&design)?;
        if let Some(set) = &self.regime_set {
            for &i in set {
                if i >= self.regimes.len() {
                    return Err(Error::Config(format!(
                        "regime_set index {i} is out of range for {} regimes",
                        self.regimes.len()
                    )));
                }
            }
        }
        self.propensity.validate(&design)?;
        self.basis.validate(&design, false)?;
        if let Some(l) = self.l {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("L must be positive, got {l}")));
            }
        }
        if !(self.at_risk_fraction > 0.0 && self.at_risk_fraction <= 1.0) {
            return Err(Error::Config("at_risk_fraction must lie in (0, 1]".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::Config("rank_tolerance must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn design(&self) -> Result<SmartDesign> {
        self.design.build()
    }

    pub fn all_regimes(&self, design: &SmartDesign) -> Result<Vec<Regime>> {
        self.regimes
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let label = match entry {
                    RegimeEntry::Rule(_) => format!("regime{i}"),
                    RegimeEntry::Labeled { label, .. } => label.clone(),
                };
                parse_regime(entry.rule(), design)
                    .map(|r| r.with_label(label))
                    .map_err(|e| Error::Config(format!("regimes[{i}]: {e}")))
            })
            .collect()
    }

    /// Regimes named by `regime_set`, requiring at least `min` of them.
    pub fn selected_regimes(&self, design: &SmartDesign, min: usize) -> Result<Vec<Regime>> {
        let all = self.all_regimes(design)?;
        let chosen: Vec<Regime> = match &self.regime_set {
            Some(set) => set.iter().map(|&i| all[i].clone()).collect(),
            None => all,
        };
        if chosen.len() < min {
            let what = if min == 1 { "regime" } else { "regimes" };
            return Err(Error::Config(format!(
                "at least {} {what} are required, regime_set selects {}",
                number_word(min),
                chosen.len()
            )));
        }
        Ok(chosen)
    }

    pub fn truncation(&self) -> Truncation {
        match self.l {
            Some(l) => Truncation::Fixed(l),
            None => Truncation::AtRiskFraction(self.at_risk_fraction),
        }
    }

    pub fn test_options(&self) -> TestOptions {
        TestOptions {
            truncation: self.truncation(),
            correction: self.correction,
            rank_tolerance: self.rank_tolerance,
        }
    }

    /// Copy with every default written out.
    pub fn resolved(&self) -> AnalysisConfig {
        let mut c = self.clone();
        if c.regime_set.is_none() {
            c.regime_set = Some((0..c.regimes.len()).collect());
        }
        c
    }

    pub fn dump(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn number_word(n: usize) -> String {
    match n {
        1 => "one".into(),
        2 => "two".into(),
        _ => n.to_string(),
    }
}

/// The configured test on `cohort`.
pub fn run_analysis(cohort: &Cohort, config: &AnalysisConfig) -> Result<TestResult> {
    let regimes = config.selected_regimes(cohort.design(), 2)?;
    let options = config.test_options();
    let projects = config.propensity.is_estimated() || !config.basis.is_empty();
    if config.augment && projects {
        run_augmented_test(cohort, &regimes, &config.propensity, &config.basis, &options)
    } else {
        let fitted = fit_propensity(cohort, &config.propensity)?;
        run_test(cohort, &regimes, &fitted, &options)
    }
}
