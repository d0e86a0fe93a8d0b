//! Generalized logrank tests for comparing survival distributions across
//! multistage treatment regimes, with inverse probability weighting,
//! score-residual augmentation and a second-order covariance correction.

pub mod augmentation;
pub mod cohort;
pub mod config;
pub mod correction;
pub mod error;
pub mod linalg;
pub mod logrank;
pub mod propensity;
pub mod regime;
pub mod sim;
pub mod special;

pub use augmentation::{build_design_matrix, residualize, run_augmented_test, BasisSpec};
pub use cohort::{event_grid, load_cohort, truncation_time, Cohort, SubjectRecord};
pub use config::{parse_config, run_analysis, AnalysisConfig};
pub use error::{Error, ErrorClass, Result};
pub use logrank::{regime_cumhaz, run_test, SurvivalCurve, TestOptions, TestResult, Truncation};
pub use propensity::{fit_propensity, FittedPropensity, PropensitySpec};
pub use regime::{parse_regime, Regime, SmartDesign};
