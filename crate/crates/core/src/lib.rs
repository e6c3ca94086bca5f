//! Simulation of self-stabilizing graph programs executed by stateless
//! clients over a replicated key-value store, with the locking, monitoring
//! and termination machinery needed to measure the effect of consistency
//! violating faults.

pub mod algorithms;
pub mod detector;
pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod locks;
pub mod monitor;
pub mod sim;
pub mod store;

pub use algorithms::{InitialState, NodeState, Program, ProgramKind, Validity};
pub use engine::{ClientRunReport, ExecutionMode};
pub use error::{Error, Result};
pub use graph::{ClientId, Graph, NodeId, Partitioning, Scheme};
pub use harness::{compare, run_experiment, BenefitTable, ExperimentConfig, ExperimentReport, RunReport};
pub use monitor::{CvfAnalysis, CvfRecord};
pub use sim::{Sim, Time, TimeMode};
pub use store::{Store, StoreConfig};
