//! Generative scenarios for synthetic SMART cohorts.
//!
//! Parameter vectors are stored explicitly so a custom scenario can be
//! supplied as JSON; named ids build them from (alpha, psi, zeta).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SubjectRecord};
use crate::error::{Error, Result};
use crate::propensity::{expit, StageColumns, StageEntry};
use crate::regime::{parse_regime, CovariateColumn, Regime, SmartDesign};

pub const NAMED_SCENARIOS: [&str; 12] = [
    "1a", "1b", "1b-alt", "2a", "2b", "2b-alt", "3a", "3b", "3c", "4", "5", "3stage",
];

/// Scenarios 1 and 2: response drawn independently of treatment, only
/// responders are re-randomized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    pub pi_r: f64,
    /// (NR1, NR0, R1, R0, RE11, RE10, RE01, RE00)
    pub theta: Vec<f64>,
    /// Intercept, x1, a1.
    pub theta_x2: Vec<f64>,
    /// Indexed by a1 = 1, 0.
    pub delta_nr: Vec<f64>,
    pub delta_r: Vec<f64>,
    /// Indexed by (a1, a2) = 11, 10, 01, 00.
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

/// Scenario 3: competing time to decision 2 and time to event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationParams {
    pub theta_1d: Vec<f64>,
    pub theta_1ss: Vec<f64>,
    pub theta_x2: Vec<f64>,
    pub theta_2al: Vec<f64>,
}

/// Scenario 4: scenario 3 with a control arm coded 2 at decision 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub theta_1d: Vec<f64>,
    pub theta_1ss: Vec<f64>,
    pub theta_x2: Vec<f64>,
    pub theta_2al: Vec<f64>,
}

/// Scenario 5: eight embedded regimes with response-specific options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EightRegimeParams {
    pub theta_1d: Vec<f64>,
    pub theta_1ss: Vec<f64>,
    pub theta_x2: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub theta_2al: Vec<f64>,
}

/// Three decision points, everyone reaching a decision is re-randomized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeStageParams {
    pub theta_1d: Vec<f64>,
    pub theta_1ss: Vec<f64>,
    pub theta_x2: Vec<f64>,
    pub theta_2d: Vec<f64>,
    pub theta_2ts: Vec<f64>,
    /// Intercept, x11, x12, x2, a1, a2.
    pub theta_x3: Vec<f64>,
    pub theta_3al: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScenarioParams {
    Response(ResponseParams),
    Consolidation(ConsolidationParams),
    Control(ControlParams),
    EightRegime(EightRegimeParams),
    ThreeStage(ThreeStageParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub id: String,
    pub n: usize,
    pub zeta: f64,
    pub psi: f64,
    pub c_max: f64,
    pub params: ScenarioParams,
}

const THETA_1A: [f64; 8] = [1.0 / 0.91, 1.0 / 0.91, 1.0 / 0.5, 1.0 / 0.5, 1.0, 1.0, 1.0, 1.0];
const THETA_1B_ALT: [f64; 8] = [
    1.0 / 0.91,
    1.0 / 1.15,
    1.0 / 0.9,
    1.0 / 0.5,
    1.0 / 2.0,
    1.0 / 2.33,
    1.0 / 1.11,
    1.0 / 0.67,
];
const THETA_2A: [f64; 8] = [
    1.0 / 0.91,
    1.0 / 0.91,
    1.0 / 0.5,
    1.0 / 0.5,
    1.0 / 3.0,
    1.0 / 3.0,
    1.0 / 3.0,
    1.0 / 3.0,
];
const THETA_2B_ALT: [f64; 8] = [
    1.0 / 0.35,
    1.0 / 0.9,
    1.0 / 0.5,
    1.0 / 0.5,
    1.0 / 3.3,
    1.0 / 3.3,
    1.0 / 3.0,
    1.0 / 3.0,
];

fn response_params(theta: &[f64; 8], covariates: bool) -> ResponseParams {
    let (tx, dr, dnr, a) = if covariates {
        (vec![0.0, 0.15, 0.0], vec![0.7; 2], vec![0.3; 2], vec![0.7; 4])
    } else {
        (vec![0.0; 3], vec![0.0; 2], vec![0.0; 2], vec![0.0; 4])
    };
    ResponseParams {
        pi_r: 0.4,
        theta: theta.to_vec(),
        theta_x2: tx,
        delta_nr: dnr,
        delta_r: dr,
        alpha1: a.clone(),
        alpha2: a,
    }
}

fn consolidation_params(a1d: f64, a1ss: f64, a2al: f64, psi: f64, zeta: f64) -> ConsolidationParams {
    ConsolidationParams {
        theta_1d: vec![a1d, 0.5 * psi, 0.5 * psi, -0.26 * zeta],
        theta_1ss: vec![a1ss, 0.5 * psi, 0.5 * psi, 0.24 * zeta],
        theta_x2: vec![0.2, 0.5 * psi, 0.4 * psi, 0.12 * zeta],
        theta_2al: vec![a2al, 0.5 * psi, -0.52 * psi, 0.6 * psi, -0.1 * zeta, -0.11 * zeta],
    }
}

impl ScenarioConfig {
    /// Parameterization of a named scenario. `zeta` has no effect for the
    /// scenario 1 and 2 families.
    pub fn named(id: &str, n: usize, zeta: f64) -> Result<Self> {
        let psi = 1.5;
        let (c_max, params, psi) = match id {
            "1a" => (3.8, ScenarioParams::Response(response_params(&THETA_1A, false)), 0.0),
            "1b" => (3.8, ScenarioParams::Response(response_params(&THETA_1A, true)), 0.0),
            "1b-alt" => (3.8, ScenarioParams::Response(response_params(&THETA_1B_ALT, true)), 0.0),
            "2a" => (8.0, ScenarioParams::Response(response_params(&THETA_2A, false)), 0.0),
            "2b" => (8.0, ScenarioParams::Response(response_params(&THETA_2A, true)), 0.0),
            "2b-alt" => (8.0, ScenarioParams::Response(response_params(&THETA_2B_ALT, true)), 0.0),
            "3a" => (
                500.0,
                ScenarioParams::Consolidation(consolidation_params(-5.5, -4.2, -5.5, psi, zeta)),
                psi,
            ),
            "3b" => (
                500.0,
                ScenarioParams::Consolidation(consolidation_params(-4.5, -4.2, -5.5, psi, zeta)),
                psi,
            ),
            "3c" => (
                300.0,
                ScenarioParams::Consolidation(consolidation_params(-5.5, -4.2, -3.5, psi, zeta)),
                psi,
            ),
            "4" => (
                500.0,
                ScenarioParams::Control(ControlParams {
                    theta_1d: vec![-5.5, 0.5 * psi, 0.5 * psi, -0.26 * zeta, 0.15 * zeta],
                    theta_1ss: vec![-4.2, 0.5 * psi, 0.5 * psi, 0.24 * zeta, -0.13 * zeta],
                    theta_x2: vec![0.2, 0.5 * psi, 0.4 * psi, 0.12 * zeta, 0.1 * zeta],
                    theta_2al: vec![
                        -5.5,
                        0.5 * psi,
                        -0.52 * psi,
                        0.6 * psi,
                        -0.1 * zeta,
                        0.15 * zeta,
                        -0.11 * zeta,
                    ],
                }),
                psi,
            ),
            "5" => {
                let base = consolidation_params(-5.5, -3.5, -5.5, psi, zeta);
                (
                    500.0,
                    ScenarioParams::EightRegime(EightRegimeParams {
                        theta_1d: base.theta_1d,
                        theta_1ss: base.theta_1ss,
                        theta_x2: base.theta_x2,
                        theta_r: vec![0.3, 0.15, 0.15, 0.2 * zeta],
                        theta_2al: vec![
                            -5.5,
                            0.5 * psi,
                            -0.52 * psi,
                            0.6 * psi,
                            -0.1 * zeta,
                            -0.11 * zeta,
                            -0.3 * zeta,
                        ],
                    }),
                    psi,
                )
            }
            "3stage" => {
                let base = consolidation_params(-4.5, -3.2, 0.0, psi, zeta);
                let second = |a: f64| vec![a, 0.5 * psi, -0.52 * psi, 0.6 * psi, -0.1 * zeta, -0.11 * zeta];
                (
                    350.0,
                    ScenarioParams::ThreeStage(ThreeStageParams {
                        theta_1d: base.theta_1d,
                        theta_1ss: base.theta_1ss,
                        theta_x2: base.theta_x2,
                        theta_2d: second(-4.0),
                        theta_2ts: second(-2.7),
                        theta_x3: vec![0.2, 0.5 * psi, 0.4 * psi, 0.12 * zeta, -0.15 * zeta, 0.0],
                        theta_3al: vec![
                            -3.0,
                            0.5 * psi,
                            -0.52 * psi,
                            0.6 * psi,
                            0.1 * psi,
                            -0.1 * zeta,
                            -0.11 * zeta,
                            0.2 * zeta,
                        ],
                    }),
                    psi,
                )
            }
            other => return Err(Error::InvalidScenario(format!("unknown scenario id {other:?}"))),
        };
        let zeta = match params {
            ScenarioParams::Response(_) => 0.0,
            _ => zeta,
        };
        Ok(ScenarioConfig {
            id: id.to_string(),
            n,
            zeta,
            psi,
            c_max,
            params,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.c_max.is_finite() && self.c_max > 0.0) {
            return bad(format!("c_max must be positive and finite, got {}", self.c_max));
        }
        let check = |name: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::InvalidScenario(format!(
                    "{name} needs {len} entries, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidScenario(format!("{name} has a non-finite entry")));
            }
            Ok(())
        };
        match &self.params {
            ScenarioParams::Response(p) => {
                if !(0.0..=1.0).contains(&p.pi_r) {
                    return bad("pi_r must lie in [0, 1]".into());
                }
                check("theta", &p.theta, 8)?;
                if p.theta.iter().any(|&t| t <= 0.0) {
                    return bad("theta rates must be positive".into());
                }
                check("theta_x2", &p.theta_x2, 3)?;
                check("delta_nr", &p.delta_nr, 2)?;
                check("delta_r", &p.delta_r, 2)?;
                check("alpha1", &p.alpha1, 4)?;
                check("alpha2", &p.alpha2, 4)
            }
            ScenarioParams::Consolidation(p) => {
                check("theta_1d", &p.theta_1d, 4)?;
                check("theta_1ss", &p.theta_1ss, 4)?;
                check("theta_x2", &p.theta_x2, 4)?;
                check("theta_2al", &p.theta_2al, 6)
            }
            ScenarioParams::Control(p) => {
                check("theta_1d", &p.theta_1d, 5)?;
                check("theta_1ss", &p.theta_1ss, 5)?;
                check("theta_x2", &p.theta_x2, 5)?;
                check("theta_2al", &p.theta_2al, 7)
            }
            ScenarioParams::EightRegime(p) => {
                check("theta_1d", &p.theta_1d, 4)?;
                check("theta_1ss", &p.theta_1ss, 4)?;
                check("theta_x2", &p.theta_x2, 4)?;
                check("theta_r", &p.theta_r, 4)?;
                check("theta_2al", &p.theta_2al, 7)
            }
            ScenarioParams::ThreeStage(p) => {
                check("theta_1d", &p.theta_1d, 4)?;
                check("theta_1ss", &p.theta_1ss, 4)?;
                check("theta_x2", &p.theta_x2, 4)?;
                check("theta_2d", &p.theta_2d, 6)?;
                check("theta_2ts", &p.theta_2ts, 6)?;
                check("theta_x3", &p.theta_x3, 6)?;
                check("theta_3al", &p.theta_3al, 8)
            }
        }
    }

    /// Design matching the scenario's SMART; the first option of each
    /// stratum is the reference category.
    pub fn design(&self) -> SmartDesign {
        let cov = |list: &[(&str, usize)]| {
            list.iter()
                .map(|&(name, stage)| CovariateColumn {
                    name: name.to_string(),
                    stage,
                })
                .collect::<Vec<_>>()
        };
        let two_arm_strata = [
            ("a1_0", "a1 == 0", vec![0, 1]),
            ("a1_1", "a1 == 1", vec![0, 1]),
        ];
        let build = || -> Result<SmartDesign> {
            match &self.params {
                ScenarioParams::Response(_) => SmartDesign::new(
                    vec![vec![0, 1], vec![0, 1]],
                    cov(&[("x1", 1), ("r", 2), ("x2", 2)]),
                )?
                .with_strata(2, &two_arm_strata),
                ScenarioParams::Consolidation(_) => SmartDesign::new(
                    vec![vec![0, 1], vec![0, 1]],
                    cov(&[("x11", 1), ("x12", 1), ("r", 2), ("x2", 2)]),
                )?
                .with_strata(2, &two_arm_strata),
                ScenarioParams::Control(_) => SmartDesign::new(
                    vec![vec![0, 1, 2], vec![0, 1]],
                    cov(&[("x11", 1), ("x12", 1), ("r", 2), ("x2", 2)]),
                )?
                .with_strata(2, &two_arm_strata),
                ScenarioParams::EightRegime(_) => SmartDesign::new(
                    vec![vec![0, 1], vec![2, 3, 4, 5]],
                    cov(&[("x11", 1), ("x12", 1), ("r", 2), ("x2", 2)]),
                )?
                .with_strata(
                    2,
                    &[
                        ("a1_0_r1", "a1 == 0 and r == 1", vec![3, 2]),
                        ("a1_0_r0", "a1 == 0 and r == 0", vec![4, 2]),
                        ("a1_1_r1", "a1 == 1 and r == 1", vec![5, 2]),
                        ("a1_1_r0", "a1 == 1 and r == 0", vec![5, 3]),
                    ],
                ),
                ScenarioParams::ThreeStage(_) => SmartDesign::new(
                    vec![vec![0, 1], vec![0, 1], vec![0, 1]],
                    cov(&[("x11", 1), ("x12", 1), ("x2", 2), ("x3", 3)]),
                ),
            }
        };
        build().expect("scenario designs are valid")
    }

    /// All regimes embedded in the scenario's SMART.
    pub fn embedded_regimes(&self) -> Vec<Regime> {
        let design = self.design();
        let parse = |text: String, label: String| {
            parse_regime(&text, &design)
                .expect("embedded regimes are valid")
                .with_label(label)
        };
        match &self.params {
            ScenarioParams::Response(_) | ScenarioParams::Consolidation(_) | ScenarioParams::Control(_) => {
                let mut out: Vec<Regime> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|&(a, b)| parse(format!("stage1: {a}; stage2: {b}"), format!("a{a}b{b}")))
                    .collect();
                if matches!(self.params, ScenarioParams::Control(_)) {
                    out.push(parse("stage1: 2; stage2: 0".into(), "control".into()));
                }
                out
            }
            ScenarioParams::EightRegime(_) => {
                let mut out = Vec::new();
                for (a, resp, nonresp) in [(0, [3, 2], [4, 2]), (1, [5, 2], [5, 3])] {
                    for b in resp {
                        for c in nonresp {
                            out.push(parse(
                                format!("stage1: {a}; stage2: if r == 1 then {b}; {c}"),
                                format!("a{a}r{b}n{c}"),
                            ));
                        }
                    }
                }
                out
            }
            ScenarioParams::ThreeStage(_) => [
                (0, 0, 0),
                (0, 1, 0),
                (1, 0, 0),
                (1, 1, 0),
                (0, 0, 1),
                (0, 1, 1),
                (1, 0, 1),
                (1, 1, 1),
            ]
            .iter()
            .map(|&(a, b, c)| {
                parse(
                    format!("stage1: {a}; stage2: {b}; stage3: {c}"),
                    format!("a{a}b{b}c{c}"),
                )
            })
            .collect(),
        }
    }

    /// Covariate basis used by the "cov" variants.
    pub fn covariate_basis(&self) -> StageColumns {
        let cols = |v: &[&str]| StageEntry::All(v.iter().map(|s| s.to_string()).collect());
        let mut m = BTreeMap::new();
        match &self.params {
            ScenarioParams::Response(_) => {
                m.insert("1".to_string(), cols(&["x1"]));
                m.insert("2".to_string(), cols(&["x1", "x2"]));
            }
            ScenarioParams::ThreeStage(_) => {
                m.insert("1".to_string(), cols(&["x11", "x12"]));
                m.insert("2".to_string(), cols(&["x11", "x12", "x2"]));
                m.insert("3".to_string(), cols(&["x11", "x12", "x2", "x3"]));
            }
            _ => {
                m.insert("1".to_string(), cols(&["x11", "x12"]));
                m.insert("2".to_string(), cols(&["x11", "x12", "x2"]));
            }
        }
        StageColumns(m)
    }
}

/// Regimes of the covariate-threshold example, for the scenario 3 design.
pub fn threshold_regimes(design: &SmartDesign) -> Result<Vec<Regime>> {
    let texts = [
        (
            "d1",
            "stage1: if x12 >= 0.3 then 1 else 0; stage2: if x12 >= 0.4 and x2 == 1 and r == 1 then 1 else 0",
        ),
        (
            "d2",
            "stage1: if x12 <= 0.5 then 1 else 0; stage2: if x12 >= 0.6 and x2 == 1 and r == 1 then 1 else 0",
        ),
        (
            "d3",
            "stage1: if x12 >= 0.7 then 1 else 0; stage2: if x12 >= 0.8 and x2 == 0 and r == 1 then 1 else 0",
        ),
    ];
    texts
        .iter()
        .map(|(label, t)| parse_regime(t, design).map(|r| r.with_label(*label)))
        .collect()
}

/// Subset of `regimes` by 1-based position, in the given order.
pub fn select_regimes(regimes: &[Regime], positions: &[usize]) -> Result<Vec<Regime>> {
    positions
        .iter()
        .map(|&p| {
            p.checked_sub(1)
                .and_then(|i| regimes.get(i))
                .cloned()
                .ok_or_else(|| Error::Config(format!("regime position {p} out of range")))
        })
        .collect()
}

/// One exponential draw, rejecting invalid rates.
pub fn exp_draw<R: Rng>(rng: &mut R, rate: f64) -> Result<f64> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::InvalidScenario(format!("non-finite or non-positive rate {rate}")));
    }
    Ok(Exp::new(rate).expect("positive rate").sample(rng))
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn dot(theta: &[f64], x: &[f64]) -> f64 {
    theta.iter().zip(x).map(|(a, b)| a * b).sum()
}

struct Draft {
    kappa: usize,
    times: Vec<f64>,
    treatments: Vec<u32>,
    covariates: Vec<(&'static str, f64)>,
    t: f64,
    c: f64,
}

impl Draft {
    fn finish(self, id: usize) -> SubjectRecord {
        let (u, delta) = if self.t <= self.c { (self.t, true) } else { (self.c, false) };
        SubjectRecord {
            id: (id + 1).to_string(),
            kappa: self.kappa,
            decision_times: self.times,
            treatments: self.treatments,
            covariates: self.covariates.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            u,
            delta,
        }
    }
}

fn response_subject<R: Rng>(p: &ResponseParams, c_max: f64, rng: &mut R) -> Result<Draft> {
    let x1 = normal(rng);
    let a1 = rng.random_bool(0.5) as u32;
    let mut r = rng.random_bool(p.pi_r);
    let ia = a1 as usize;
    // index helpers for the (1, 0) ordering of the parameter vectors
    let by_a1 = |v: &[f64]| if a1 == 1 { v[0] } else { v[1] };
    let c = rng.random::<f64>() * c_max;
    let mut covariates = vec![("x1", x1)];
    if !r {
        let rate = by_a1(&p.theta[0..2]) * (by_a1(&p.delta_nr) * x1).exp();
        let t = exp_draw(rng, rate)?;
        return Ok(Draft {
            kappa: 1,
            times: vec![0.0],
            treatments: vec![a1],
            covariates,
            t,
            c,
        });
    }
    let p_x2 = expit(dot(&p.theta_x2, &[1.0, x1, a1 as f64]));
    let x2 = rng.random_bool(p_x2) as u32 as f64;
    let a2 = rng.random_bool(0.5) as u32;
    let rate_r = by_a1(&p.theta[2..4]) * (by_a1(&p.delta_r) * x1).exp();
    let t_r = exp_draw(rng, rate_r)?;
    // (a1, a2) = 11, 10, 01, 00 -> 0, 1, 2, 3
    let cell = (1 - ia) * 2 + (1 - a2 as usize);
    let rate_re = p.theta[4 + cell] * (p.alpha1[cell] * x1 + p.alpha2[cell] * (x2 - p_x2)).exp();
    let t_re = exp_draw(rng, rate_re)?;
    let t = t_r + t_re;
    if c < t_r {
        r = false;
    }
    if !r {
        return Ok(Draft {
            kappa: 1,
            times: vec![0.0],
            treatments: vec![a1],
            covariates,
            t,
            c,
        });
    }
    covariates.push(("r", 1.0));
    covariates.push(("x2", x2));
    Ok(Draft {
        kappa: 2,
        times: vec![0.0, t_r],
        treatments: vec![a1, a2],
        covariates,
        t,
        c,
    })
}

fn consolidation_subject<R: Rng>(p: &ConsolidationParams, c_max: f64, rng: &mut R) -> Result<Draft> {
    let x11 = normal(rng);
    let x12: f64 = rng.random();
    let a1 = rng.random_bool(0.5) as u32;
    let a = a1 as f64;
    let z1 = [1.0, x11, x12 - 0.5, a - 0.5];
    let t_d = exp_draw(rng, dot(&p.theta_1d, &z1).exp())?;
    let t_ss = exp_draw(rng, dot(&p.theta_1ss, &z1).exp())?;
    let c = rng.random::<f64>() * c_max;
    let mut covariates = vec![("x11", x11), ("x12", x12)];
    if t_ss >= t_d {
        return Ok(Draft {
            kappa: 1,
            times: vec![0.0],
            treatments: vec![a1],
            covariates,
            t: t_d,
            c,
        });
    }
    let p_x2 = expit(dot(&p.theta_x2, &[1.0, x11, x12, a]));
    let x2 = rng.random_bool(p_x2) as u32 as f64;
    let a2 = rng.random_bool(0.5) as u32;
    let z2 = [1.0, x11, x12 - 0.5, x2 - p_x2, a - 0.5, a2 as f64 - 0.5];
    let t_al = exp_draw(rng, dot(&p.theta_2al, &z2).exp())?;
    let t = t_ss + t_al;
    if c < t_ss {
        return Ok(Draft {
            kappa: 1,
            times: vec![0.0],
            treatments: vec![a1],
            covariates,
            t,
            c,
        });
    }
    covariates.push(("r", 1.0));
    covariates.push(("x2", x2));
    Ok(Draft {
        kappa: 2,
        times: vec![0.0, t_ss],
        treatments: vec![a1, a2],
        covariates,
        t,
        c,
    })
}

fn control_subject<R: Rng>(p: &ControlParams, c_max: f64, rng: &mut R) -> Result<Draft> {
    let x11 = normal(rng);
    let x12: f64 = rng.random();
    let a1: u32 = rng.random_range(0..3);
    let i1 = (a1 == 1) as u32 as f64;
    let i2 = (a1 == 2) as u32 as f64;
    let z1 = [1.0, x11, x12, i1, i2];
    let t_d = exp_draw(rng, dot(&p.theta_1d, &z1).exp())?;
    let t_ss = exp_draw(rng, dot(&p.theta_1ss, &z1).exp())?;
    let c = rng.random::<f64>() * c_max;
    let mut covariates = vec![("x11", x11), ("x12", x12)];
    let stage1_only = |t: f64, covariates| Draft {
        kappa: 1,
        times: vec![0.0],
        treatments: vec![a1],
        covariates,
        t,
        c,
    };
    if t_ss >= t_d {
        return Ok(stage1_only(t_d, covariates));
    }
    let p_x2 = expit(dot(&p.theta_x2, &z1));
    let x2 = rng.random_bool(p_x2) as u32 as f64;
    let a2 = rng.random_bool(0.5) as u32;
    let z2 = [1.0, x11, x12, x2, i1, i2, a2 as f64 * (a1 < 2) as u32 as f64];
    let t_al = exp_draw(rng, dot(&p.theta_2al, &z2).exp())?;
    let t = t_ss + t_al;
    // the control arm has no second randomization
    if c < t_ss || a1 == 2 {
        return Ok(stage1_only(t, covariates));
    }
    covariates.push(("r", 1.0));
    covariates.push(("x2", x2));
    Ok(Draft {
        kappa: 2,
        times: vec![0.0, t_ss],
        treatments: vec![a1, a2],
        covariates,
        t,
        c,
    })
}

fn eight_regime_subject<R: Rng>(p: &EightRegimeParams, c_max: f64, rng: &mut R) -> Result<Draft> {
    let x11 = normal(rng);
    let x12: f64 = rng.random();
    let a1 = rng.random_bool(0.5) as u32;
    let a = a1 as f64;
    let z1 = [1.0, x11, x12, a];
    let t_d = exp_draw(rng, dot(&p.theta_1d, &z1).exp())?;
    let t_ss = exp_draw(rng, dot(&p.theta_1ss, &z1).exp())?;
    let c = rng.random::<f64>() * c_max;
    let mut covariates = vec![("x11", x11), ("x12", x12)];
    let stage1_only = |t: f64, covariates| Draft {
        kappa: 1,
        times: vec![0.0],
        treatments: vec![a1],
        covariates,
        t,
        c,
    };
    if t_ss >= t_d {
        return Ok(stage1_only(t_d, covariates));
    }
    let r = rng.random_bool(expit(dot(&p.theta_r, &z1)));
    let p_x2 = expit(dot(&p.theta_x2, &z1));
    let x2 = rng.random_bool(p_x2) as u32 as f64;
    let b = rng.random_bool(0.5);
    // b selects the modeled (second-listed) option of the stratum
    let (reference, modeled) = match (a1, r) {
        (0, true) => (3, 2),
        (0, false) => (4, 2),
        (_, true) => (5, 2),
        (_, false) => (5, 3),
    };
    let a2 = if b { modeled } else { reference };
    let z2 = [1.0, x11, x12, x2, a, b as u32 as f64, r as u32 as f64];
    let t_al = exp_draw(rng, dot(&p.theta_2al, &z2).exp())?;
    let t = t_ss + t_al;
    if c < t_ss {
        return Ok(stage1_only(t, covariates));
    }
    covariates.push(("r", r as u32 as f64));
    covariates.push(("x2", x2));
    Ok(Draft {
        kappa: 2,
        times: vec![0.0, t_ss],
        treatments: vec![a1, a2],
        covariates,
        t,
        c,
    })
}

fn three_stage_subject<R: Rng>(p: &ThreeStageParams, c_max: f64, rng: &mut R) -> Result<Draft> {
    let x11 = normal(rng);
    let x12: f64 = rng.random();
    let a1 = rng.random_bool(0.5) as u32;
    let a = a1 as f64;
    let z1 = [1.0, x11, x12 - 0.5, a - 0.5];
    let t_d1 = exp_draw(rng, dot(&p.theta_1d, &z1).exp())?;
    let t_ss = exp_draw(rng, dot(&p.theta_1ss, &z1).exp())?;
    let c = rng.random::<f64>() * c_max;
    let mut covariates = vec![("x11", x11), ("x12", x12)];
    let mut draft = Draft {
        kappa: 1,
        times: vec![0.0],
        treatments: vec![a1],
        covariates: Vec::new(),
        t: t_d1,
        c,
    };
    if t_ss >= t_d1 {
        draft.covariates = covariates;
        return Ok(draft);
    }
    let p_x2 = expit(dot(&p.theta_x2, &[1.0, x11, x12, a]));
    let x2 = rng.random_bool(p_x2) as u32 as f64;
    let a2 = rng.random_bool(0.5) as u32;
    let b = a2 as f64;
    let z2 = [1.0, x11, x12 - 0.5, x2 - p_x2, a - 0.5, b - 0.5];
    let t_d2 = exp_draw(rng, dot(&p.theta_2d, &z2).exp())?;
    let t_ts = exp_draw(rng, dot(&p.theta_2ts, &z2).exp())?;
    let reached2 = c >= t_ss;
    if reached2 {
        draft.kappa = 2;
        draft.times.push(t_ss);
        draft.treatments.push(a2);
        covariates.push(("x2", x2));
    }
    if t_ts >= t_d2 {
        draft.t = t_ss + t_d2;
        draft.covariates = covariates;
        return Ok(draft);
    }
    let p_x3 = expit(dot(&p.theta_x3, &[1.0, x11, x12, x2, a, b]));
    let x3 = rng.random_bool(p_x3) as u32 as f64;
    let a3 = rng.random_bool(0.5) as u32;
    let z3 = [
        1.0,
        x11,
        x12 - 0.5,
        x2 - p_x2,
        x3 - p_x3,
        a - 0.5,
        b - 0.5,
        a3 as f64 - 0.5,
    ];
    let t_al = exp_draw(rng, dot(&p.theta_3al, &z3).exp())?;
    draft.t = t_ss + t_ts + t_al;
    if reached2 && c >= t_ss + t_ts {
        draft.kappa = 3;
        draft.times.push(t_ss + t_ts);
        draft.treatments.push(a3);
        covariates.push(("x3", x3));
    }
    draft.covariates = covariates;
    Ok(draft)
}

/// Draws a cohort of `config.n` subjects; identical (config, seed) pairs
/// give identical cohorts.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subjects = Vec::with_capacity(config.n);
    for i in 0..config.n {
        let draft = match &config.params {
            ScenarioParams::Response(p) => response_subject(p, config.c_max, &mut rng)?,
            ScenarioParams::Consolidation(p) => consolidation_subject(p, config.c_max, &mut rng)?,
            ScenarioParams::Control(p) => control_subject(p, config.c_max, &mut rng)?,
            ScenarioParams::EightRegime(p) => eight_regime_subject(p, config.c_max, &mut rng)?,
            ScenarioParams::ThreeStage(p) => three_stage_subject(p, config.c_max, &mut rng)?,
        };
        subjects.push(draft.finish(i));
    }
    Cohort::new(config.design(), subjects)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_named_scenario_generates() {
        for id in NAMED_SCENARIOS {
            let cfg = ScenarioConfig::named(id, 300, 1.0).unwrap();
            let c = generate_scenario(&cfg, 7).unwrap();
            assert_eq!(c.len(), 300, "{id}");
            assert!(c.subjects().iter().any(|s| s.kappa >= 2), "{id}");
            let regimes = cfg.embedded_regimes();
            assert!(regimes.len() >= 4);
        }
    }

    #[test]
    fn determinism() {
        let cfg = ScenarioConfig::named("3a", 200, 0.0).unwrap();
        assert_eq!(generate_scenario(&cfg, 11).unwrap(), generate_scenario(&cfg, 11).unwrap());
        assert_ne!(generate_scenario(&cfg, 11).unwrap(), generate_scenario(&cfg, 12).unwrap());
    }

    #[test]
    fn nonresponders_stop_at_stage_one() {
        let cfg = ScenarioConfig::named("1b", 2000, 0.0).unwrap();
        let c = generate_scenario(&cfg, 3).unwrap();
        for s in c.subjects() {
            let r = s.covariates.get("r").copied();
            assert_eq!(s.kappa == 2, r == Some(1.0));
        }
    }

    #[test]
    fn scenario5_treatment_within_stratum() {
        let cfg = ScenarioConfig::named("5", 2000, 0.0).unwrap();
        let c = generate_scenario(&cfg, 5).unwrap();
        let d = c.design();
        for (i, s) in c.subjects().iter().enumerate() {
            if s.kappa == 2 {
                let st = c.stratum(i, 2).unwrap();
                assert!(d.strata(2)[st].options.contains(&s.treatment(2)));
            }
        }
    }

    #[test]
    fn three_stage_reaches_stage_three() {
        let cfg = ScenarioConfig::named("3stage", 1000, 0.0).unwrap();
        let c = generate_scenario(&cfg, 9).unwrap();
        assert!(c.subjects().iter().any(|s| s.kappa == 3));
    }

    #[test]
    fn invalid_custom_rate() {
        let mut cfg = ScenarioConfig::named("3a", 10, 0.0).unwrap();
        if let ScenarioParams::Consolidation(p) = &mut cfg.params {
            p.theta_1d[0] = f64::NAN;
        }
        assert!(matches!(generate_scenario(&cfg, 1), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ScenarioConfig::named("4", 100, 1.5).unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&s).unwrap(), cfg);
    }
}
