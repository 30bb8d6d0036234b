//! Reliability-aware dispatching of non-dedicated sensing vehicles.
//!
//! The crate models a city as a discrete spatiotemporal grid, scores fleet
//! placements with the aggregated sensing quality (ASQ) objective, infers
//! per-sensor reliability and bias with truth discovery, prices route changes
//! with a budgeted incentive scheme and greedily dispatches vehicles toward
//! under-sensed cells. A seeded simulator ties the pieces together and
//! reports reconstruction error against a synthetic ground truth.

pub mod dispatch;
pub mod experiment;
pub mod gridworld;
pub mod incentive;
pub mod metrics;
pub mod reconstruct;
pub mod rng;
pub mod scenario;
pub mod truth_discovery;

use thiserror::Error;

/// Any failure surfaced by the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] gridworld::GridError),
    #[error(transparent)]
    Eval(#[from] metrics::EvalError),
    #[error(transparent)]
    Inference(#[from] truth_discovery::InferenceError),
    #[error(transparent)]
    Incentive(#[from] incentive::IncentiveError),
    #[error(transparent)]
    Dispatch(#[from] dispatch::DispatchError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Reconstruct(#[from] reconstruct::ReconstructError),
    #[error(transparent)]
    Experiment(#[from] experiment::ExperimentError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for problems with user-supplied configuration or input files.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Scenario(scenario::ScenarioError::Config { .. })
                | Error::Scenario(scenario::ScenarioError::Parse(_))
                | Error::Scenario(scenario::ScenarioError::Row { .. })
                | Error::Experiment(experiment::ExperimentError::Spec(_))
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
