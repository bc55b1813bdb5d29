//! Power estimation, SAIF export, and fault-injection reliability analysis.

mod finetune;
mod power;
mod reliability;
mod saif;

use thiserror::Error;

use crate::model::ModelError;
use crate::simulate::SimError;

pub use finetune::{
    finetune_reliability, finetune_workloads, predicted_activity, reliability_sample, workload_sample,
    ReliabilityReport, ReliabilityTuneConfig, WorkloadReport, WorkloadResult, WorkloadTuneConfig,
};
pub use power::{default_power_mask, original_gate_mask, power_estimate, PowerConfig};
pub use reliability::{fault_run, reliability_labels, FaultConfig, FaultRun, FlipLabels, FlipRecord};
pub use saif::{parse_saif, write_saif, SaifDocument, SaifError, SaifNet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DownstreamError {
    #[error("power mask selects no nodes")]
    EmptyMask,
    #[error("activity {value} of node {node} is outside [0, 1]")]
    BadActivity { node: usize, value: f64 },
    #[error("{0}")]
    Mismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DownstreamError>;
