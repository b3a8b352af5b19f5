//! Scenario runner for the memory node: configuration, experiment
//! scenarios, calibration and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod report;
pub mod scenario;

pub use config::{MemoryMode, NodeConfig};
pub use report::{Check, Report};
pub use scenario::{run_scenario, ScenarioOptions, SCENARIOS};

#[derive(Debug, thiserror::Error)]
pub enum NodeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] afc_core::Error),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("nondeterministic output: {0}")]
    Nondeterministic(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("refusing to overwrite the input configuration {0}")]
    WouldOverwrite(String),
}
