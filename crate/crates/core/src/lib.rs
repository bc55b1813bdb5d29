//! Representation learning for sequential netlists.
//!
//! The pipeline runs netlist ingestion ([`netgraph`]), propagation scheduling
//! ([`schedule`]), stochastic simulation ([`simulate`]), label generation
//! ([`supervise`]), a small reverse-mode tensor core ([`tensor`]), the
//! three-space graph model ([`model`]) and the power and reliability
//! applications ([`downstream`]).

pub mod downstream;
pub mod model;
pub mod netgraph;
pub mod rng;
pub mod schedule;
pub mod simulate;
pub mod supervise;
pub mod tensor;

pub use netgraph::{CircuitBuilder, CircuitGraph, NodeId, NodeKind};
pub use schedule::{detect_cycles, levelize, CyclicRegion, PropagationPlan};
pub use simulate::{simulate, SimConfig, SimStats, Workload};
