//! Monte Carlo rejection rates for the four estimated-propensity variants.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::{build_design_matrix, residualize, BasisSpec};
use crate::cohort::{event_grid, Cohort};
use crate::error::{Error, Result};
use crate::linalg::{mean_outer, DEFAULT_RANK_TOLERANCE};
use crate::logrank::{chi2_from_terms, LogrankPass, Truncation, WeightTable};
use crate::propensity::fit_saturated;
use crate::regime::Regime;
use crate::sim::scenarios::{generate_scenario, ScenarioConfig};

pub const RNG_NAME: &str = "ChaCha8Rng";

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn replicate_seed(master: u64, r: u64) -> u64 {
    splitmix64(master ^ r)
}

/// U/C: uncorrected or corrected covariance; nocov/cov: score-only or
/// score plus covariate basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum McVariant {
    #[serde(rename = "U_nocov")]
    UNocov,
    #[serde(rename = "C_nocov")]
    CNocov,
    #[serde(rename = "U_cov")]
    UCov,
    #[serde(rename = "C_cov")]
    CCov,
}

impl McVariant {
    pub const ALL: [McVariant; 4] = [McVariant::UNocov, McVariant::CNocov, McVariant::UCov, McVariant::CCov];

    pub fn corrected(self) -> bool {
        matches!(self, McVariant::CNocov | McVariant::CCov)
    }

    pub fn uses_covariates(self) -> bool {
        matches!(self, McVariant::UCov | McVariant::CCov)
    }

    pub fn name(self) -> &'static str {
        match self {
            McVariant::UNocov => "U_nocov",
            McVariant::CNocov => "C_nocov",
            McVariant::UCov => "U_cov",
            McVariant::CCov => "C_cov",
        }
    }
}

impl std::str::FromStr for McVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        McVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub truncation: Truncation,
    pub rank_tolerance: f64,
    pub variants: Vec<McVariant>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            reps: 1000,
            master_seed: 42,
            alpha: 0.05,
            truncation: Truncation::default(),
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            variants: McVariant::ALL.to_vec(),
        }
    }
}

/// Test outcomes for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: McVariant,
    pub statistic: f64,
    pub nu: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEvaluation {
    pub outcomes: Vec<VariantOutcome>,
    /// trace of n^{-1} sum T_i T_i^T before projection.
    pub trace_sigma: f64,
    /// trace after projecting on the score columns.
    pub trace_sigma_gamma: f64,
}

/// Runs every requested variant on one cohort with saturated propensities.
pub fn evaluate_variants(
    cohort: &Cohort,
    regimes: &[Regime],
    basis: &BasisSpec,
    variants: &[McVariant],
    truncation: Truncation,
    rank_tolerance: f64,
) -> Result<CohortEvaluation> {
    let l = truncation.resolve(cohort);
    let grid = event_grid(cohort, l)?;
    let fitted = fit_saturated(cohort)?;
    let weights = WeightTable::build(cohort, regimes, &fitted)?;
    let pass = LogrankPass::compute(&weights, &grid);
    let x_nocov = build_design_matrix(cohort, &fitted, &BasisSpec::default())?;
    let r_nocov = residualize(&pass.iid, &x_nocov.x)?;
    let r_cov: Option<DMatrix<f64>> = if variants.iter().any(|v| v.uses_covariates()) {
        let x = build_design_matrix(cohort, &fitted, basis)?;
        Some(residualize(&pass.iid, &x.x)?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(variants.len());
    for &v in variants {
        let terms = if v.uses_covariates() {
            r_cov.as_ref().expect("computed above")
        } else {
            &r_nocov
        };
        let out = chi2_from_terms(terms, v.corrected().then_some(&pass.g), rank_tolerance)?;
        outcomes.push(VariantOutcome {
            variant: v,
            statistic: out.statistic,
            nu: out.nu,
            p_value: out.p_value,
        });
    }
    Ok(CohortEvaluation {
        outcomes,
        trace_sigma: mean_outer(&pass.iid).trace(),
        trace_sigma_gamma: mean_outer(&r_nocov).trace(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: u64,
    pub seed: u64,
    pub evaluation: Option<CohortEvaluation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: McVariant,
    pub rejections: usize,
    /// Replicates that produced a statistic.
    pub reps: usize,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub scenario: ScenarioConfig,
    pub regimes: Vec<String>,
    pub reps: usize,
    pub master_seed: u64,
    pub rng: String,
    pub alpha: f64,
    pub truncation: Truncation,
    pub rank_tolerance: f64,
    pub variants: Vec<VariantSummary>,
    pub failed_replicates: usize,
    pub mean_trace_sigma: f64,
    pub mean_trace_sigma_gamma: f64,
    pub runtime_secs: f64,
    #[serde(skip)]
    pub replicates: Vec<ReplicateOutcome>,
}

impl McReport {
    pub fn summary(&self, v: McVariant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }

    pub fn rate(&self, v: McVariant) -> Option<f64> {
        self.summary(v).map(|s| s.rate)
    }

    /// Replicates where `a` rejects but `b` does not, and the reverse.
    pub fn discordance(&self, a: McVariant, b: McVariant) -> (usize, usize) {
        let mut ab = 0;
        let mut ba = 0;
        for r in &self.replicates {
            let Some(e) = &r.evaluation else { continue };
            let p = |v| e.outcomes.iter().find(|o| o.variant == v).map(|o| o.p_value);
            if let (Some(pa), Some(pb)) = (p(a), p(b)) {
                let (ra, rb) = (pa < self.alpha, pb < self.alpha);
                ab += (ra && !rb) as usize;
                ba += (rb && !ra) as usize;
            }
        }
        (ab, ba)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["scenario", "n", "zeta", "reps", "variant", "rejection_rate", "mc_se"])?;
        for s in &self.variants {
            wr.write_record([
                self.scenario.id.clone(),
                self.scenario.n.to_string(),
                self.scenario.zeta.to_string(),
                s.reps.to_string(),
                s.variant.name().to_string(),
                s.rate.to_string(),
                s.mc_se.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs `options.reps` replicates of `scenario` against `regimes` (the
/// embedded regimes when empty). Per-replicate failures are counted, not
/// fatal. Results do not depend on the number of worker threads.
pub fn monte_carlo(scenario: &ScenarioConfig, regimes: &[Regime], options: &McOptions) -> Result<McReport> {
    scenario.validate()?;
    let start = Instant::now();
    let regimes: Vec<Regime> = if regimes.is_empty() {
        scenario.embedded_regimes()
    } else {
        regimes.to_vec()
    };
    if regimes.len() < 2 {
        return Err(Error::Config("at least two regimes are required".into()));
    }
    let basis = scenario.covariate_basis();
    let replicates: Vec<ReplicateOutcome> = (0..options.reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(options.master_seed, r);
            let result = generate_scenario(scenario, seed).and_then(|cohort| {
                evaluate_variants(
                    &cohort,
                    &regimes,
                    &basis,
                    &options.variants,
                    options.truncation,
                    options.rank_tolerance,
                )
            });
            match result {
                Ok(e) => ReplicateOutcome {
                    index: r,
                    seed,
                    evaluation: Some(e),
                    error: None,
                },
                Err(e) => {
                    log::warn!("replicate {r} failed: {e}");
                    ReplicateOutcome {
                        index: r,
                        seed,
                        evaluation: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let ok: Vec<&CohortEvaluation> = replicates.iter().filter_map(|r| r.evaluation.as_ref()).collect();
    let variants = if options.reps == 0 {
        Vec::new()
    } else {
        options
            .variants
            .iter()
            .map(|&v| {
                let mut rejections = 0;
                let mut reps = 0;
                for e in &ok {
                    if let Some(o) = e.outcomes.iter().find(|o| o.variant == v) {
                        reps += 1;
                        rejections += (o.p_value < options.alpha) as usize;
                    }
                }
                let rate = if reps > 0 { rejections as f64 / reps as f64 } else { 0.0 };
                let mc_se = if reps > 0 { (rate * (1.0 - rate) / reps as f64).sqrt() } else { 0.0 };
                VariantSummary {
                    variant: v,
                    rejections,
                    reps,
                    rate,
                    mc_se,
                }
            })
            .collect()
    };
    let mean = |f: fn(&CohortEvaluation) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|e| f(e)).sum::<f64>() / ok.len() as f64
        }
    };
    Ok(McReport {
        scenario: scenario.clone(),
        regimes: regimes.iter().map(|r| r.label.clone()).collect(),
        reps: options.reps,
        master_seed: options.master_seed,
        rng: RNG_NAME.to_string(),
        alpha: options.alpha,
        truncation: options.truncation,
        rank_tolerance: options.rank_tolerance,
        failed_replicates: replicates.len() - ok.len(),
        mean_trace_sigma: mean(|e| e.trace_sigma),
        mean_trace_sigma_gamma: mean(|e| e.trace_sigma_gamma),
        variants,
        runtime_secs: start.elapsed().as_secs_f64(),
        replicates,
    })
}
