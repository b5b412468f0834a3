//! Experiment configuration, scenario orchestration, artifact persistence and
//! reports for the `lle-core` numerics.

pub mod config;
pub mod criteria;
pub mod persist;
pub mod pipeline;
pub mod properties;
pub mod report;
pub mod scenario;

pub use config::ExperimentConfig;
pub use scenario::{run_scenario, Outcome, Scenario};

/// Environment variable naming the root for artifact directories.
pub const OUT_ENV: &str = "LLE_LAB_OUT";
