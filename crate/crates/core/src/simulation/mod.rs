//! Seeded Monte-Carlo replications that check the oracle and selection
//! results run by run, and the `s0 log p / n` scaling of the errors.
//!
//! Replication `i` draws from its own ChaCha stream under the master seed, so
//! a record depends only on `(config, i)` and not on scheduling.

mod config;
mod instance;
mod run;
mod scaling;
mod summary;

pub use config::{
    Beta0Spec, Covariance, DesignLaw, ErrorLaw, LambdaRule, Magnitude, Placement, ScenarioConfig, Signs, TheoremKind,
};
pub use instance::{gamma_eff, generate_instance, replication_rng, shared_design, GammaEff, Instance, DESIGN_STREAM};
pub use run::{max_correlation, run_replication, run_scenario, Comparison, RunRecord, Scenario, TheoremCheck, BOUND_SLACK};
pub use scaling::{log_log_slope, scaling_study, ScalingOptions, ScalingPoint, ScalingReport};
pub use summary::{binomial_limit, median, verify_theorems, Summary, TheoremSummary};
