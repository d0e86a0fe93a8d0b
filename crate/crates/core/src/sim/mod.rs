//! Synthetic SMART cohorts, Monte Carlo experiments and closed-form hazard
//! diagnostics.

pub mod diagnostics;
pub mod monte_carlo;
pub mod scenarios;

pub use diagnostics::{hazard_diagnostics, HazardModel, HazardRow};
pub use monte_carlo::{monte_carlo, splitmix64, McOptions, McReport, McVariant};
pub use scenarios::{generate_scenario, ScenarioConfig, ScenarioParams};
