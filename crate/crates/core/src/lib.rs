//! Selecting small representative action subsets for bandit families.
//!
//! Given a family of bandit instances sharing one action space, the crate
//! samples instances, collects their optimal actions and measures how much
//! reward is lost by restricting to that subset. Baselines, regret-bound
//! evaluators and the experiment runners live alongside.

pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod montecarlo;
pub mod policies;
pub mod select;
pub mod verify;

pub use error::{Error, Result};
pub use evaluation::{
    estimate_regret, estimate_regret_many, run_experiment, ExperimentConfig, ExperimentKind,
    ExperimentOutput, RegretEstimate,
};
pub use geometry::{BoundReport, Metric, Partition};
pub use model::{ActionSpace, BanditFamily, BanditInstance, KernelSpec, RewardModel};
pub use select::{epsilon_net_select, OracleSpec, SelectionResult, StopRule};
