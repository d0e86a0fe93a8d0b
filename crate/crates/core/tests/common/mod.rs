#![allow(dead_code)]

use std::collections::BTreeMap;

use regimetest::regime::CovariateColumn;
use regimetest::sim::{generate_scenario, ScenarioConfig};
use regimetest::{parse_regime, Cohort, FittedPropensity, Regime, SmartDesign, SubjectRecord};

pub fn subject(id: &str, treatments: &[u32], times: &[f64], covs: &[(&str, f64)], u: f64, delta: bool) -> SubjectRecord {
    SubjectRecord {
        id: id.to_string(),
        kappa: treatments.len(),
        decision_times: times.to_vec(),
        treatments: treatments.to_vec(),
        covariates: covs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        u,
        delta,
    }
}

pub fn single_stage_design() -> SmartDesign {
    SmartDesign::new(vec![vec![0, 1]], vec![]).unwrap()
}

/// Two arms, six subjects, no censoring, one tied event time.
pub fn six_subjects() -> Cohort {
    let rows = [(1, 1.0), (0, 2.0), (1, 2.0), (1, 3.5), (0, 4.0), (0, 6.0)];
    let subjects = rows
        .iter()
        .enumerate()
        .map(|(i, &(a, u))| subject(&format!("s{i}"), &[a], &[0.0], &[], u, true))
        .collect();
    Cohort::new(single_stage_design(), subjects).unwrap()
}

pub fn arm_regimes(design: &SmartDesign) -> Vec<Regime> {
    vec![
        parse_regime("stage1: 1", design).unwrap(),
        parse_regime("stage1: 0", design).unwrap(),
    ]
}

pub fn half(design: &SmartDesign) -> FittedPropensity {
    FittedPropensity::known(design, &[vec![0.5, 0.5]]).unwrap()
}

/// Two stages, response indicator `r` recorded at stage 2.
pub fn response_design() -> SmartDesign {
    SmartDesign::new(
        vec![vec![0, 1], vec![2, 3]],
        vec![CovariateColumn {
            name: "r".into(),
            stage: 2,
        }],
    )
    .unwrap()
}

pub fn scenario_cohort(id: &str, n: usize, zeta: f64, seed: u64) -> (ScenarioConfig, Cohort) {
    let config = ScenarioConfig::named(id, n, zeta).unwrap();
    let cohort = generate_scenario(&config, seed).unwrap();
    (config, cohort)
}

pub fn max_abs(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}
