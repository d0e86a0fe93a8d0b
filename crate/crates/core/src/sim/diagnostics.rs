//! Closed-form hazards for the response-driven generative models, used to
//! inspect how far the post-response hazard departs from the pre-response
//! one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::scenarios::{ScenarioConfig, ScenarioParams};

/// Hazard of an event before response when the pre-response event time is
/// exponential(l1), the time to response is exponential(l2) and a fraction
/// `pi_r` respond.
pub fn prior_response_hazard(u: f64, l1: f64, l2: f64, pi_r: f64) -> f64 {
    // divided through by exp(-l1 u)
    let tail = pi_r * (-(l2 - l1) * u).exp();
    (1.0 - pi_r) * l1 / ((1.0 - pi_r) + tail)
}

/// Marginal hazard of the mixture model with post-response rate l3.
pub fn mixture_lambda0(u: f64, l1: f64, l2: f64, l3: f64, pi_r: f64) -> Result<f64> {
    if l2 == l3 {
        return Err(Error::SingularParameterization);
    }
    // every exponential is scaled by exp(m u) so none overflows
    let m = l1.min(l2).min(l3);
    let e1 = (-(l1 - m) * u).exp();
    let e2 = (-(l2 - m) * u).exp();
    let e3 = (-(l3 - m) * u).exp();
    let num = (1.0 - pi_r) * l1 * e1 + pi_r * l2 * l3 * (e3 - e2) / (l2 - l3);
    let den = (1.0 - pi_r) * e1 + pi_r * (l2 * e3 - l3 * e2) / (l2 - l3);
    Ok(num / den)
}

/// Marginal hazard when the time to decision 2 (rate l2) competes with the
/// pre-decision event time (rate l1) and l3 is the post-decision rate.
pub fn sequential_lambda0(u: f64, l1: f64, l2: f64, l3: f64) -> f64 {
    let s = l1 + l2;
    let r = s - l3;
    if r >= 0.0 {
        let e = (-r * u).exp();
        (s * (l1 - l3) * e + l2 * l3) / ((l1 - l3) * e + l2)
    } else {
        let e = (r * u).exp();
        (s * (l1 - l3) + l2 * l3 * e) / ((l1 - l3) + l2 * e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum HazardModel {
    Mixture { l1: f64, l2: f64, l3: f64, pi_r: f64 },
    Sequential { l1: f64, l2: f64, l3: f64 },
}

impl HazardModel {
    /// Null-hypothesis rates implied by a scenario, ignoring covariates.
    pub fn from_scenario(config: &ScenarioConfig) -> Result<Self> {
        match &config.params {
            ScenarioParams::Response(p) => Ok(HazardModel::Mixture {
                l1: p.theta[0],
                l2: p.theta[2],
                l3: p.theta[4],
                pi_r: p.pi_r,
            }),
            ScenarioParams::Consolidation(p) => Ok(HazardModel::Sequential {
                l1: p.theta_1d[0].exp(),
                l2: p.theta_1ss[0].exp(),
                l3: p.theta_2al[0].exp(),
            }),
            _ => Err(Error::InvalidScenario(format!(
                "no closed-form hazards for scenario {}",
                config.id
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HazardRow {
    pub u: f64,
    pub haz_prior_response: f64,
    pub haz_post_response: f64,
    pub lambda0: f64,
}

pub fn hazard_diagnostics(model: &HazardModel, grid: &[f64]) -> Result<Vec<HazardRow>> {
    grid.iter()
        .map(|&u| {
            Ok(match *model {
                HazardModel::Mixture { l1, l2, l3, pi_r } => HazardRow {
                    u,
                    haz_prior_response: prior_response_hazard(u, l1, l2, pi_r),
                    haz_post_response: l3,
                    lambda0: mixture_lambda0(u, l1, l2, l3, pi_r)?,
                },
                HazardModel::Sequential { l1, l2, l3 } => HazardRow {
                    u,
                    haz_prior_response: l1,
                    haz_post_response: l3,
                    lambda0: sequential_lambda0(u, l1, l2, l3),
                },
            })
        })
        .collect()
}

pub fn write_hazard_csv<W: std::io::Write>(rows: &[HazardRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["u", "haz_prior_response", "haz_post_response", "lambda0"])?;
    for r in rows {
        wr.write_record([
            r.u.to_string(),
            r.haz_prior_response.to_string(),
            r.haz_post_response.to_string(),
            r.lambda0.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
