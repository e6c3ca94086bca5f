use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph parameters: {0}")]
    InvalidGraph(String),

    #[error("random regular generation gave up after {attempts} attempts (n={n}, d={d})")]
    RetryBudgetExhausted { n: usize, d: usize, attempts: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("partition file does not assign nodes {missing:?}")]
    MissingAssignment { missing: Vec<NodeId> },

    #[error("invalid partitioning: {0}")]
    InvalidPartition(String),

    #[error("invalid store configuration: {0}")]
    InvalidStoreConfig(String),

    #[error("cannot resolve an empty version list")]
    EmptyVersions,

    #[error("omniscient log is disabled")]
    LogDisabled,

    #[error("malformed payload {payload:?}: {msg}")]
    Payload { payload: String, msg: String },

    #[error("lock key requires two distinct endpoints, got ({0}, {0})")]
    SelfLoopLock(NodeId),

    #[error("client {client} does not own node {node}")]
    NotOwner { client: u32, node: NodeId },

    #[error("store request failed: {0}")]
    StoreFailure(String),

    #[error("missing state for neighbor {neighbor} of node {node}")]
    MissingNeighbor { node: NodeId, neighbor: NodeId },

    #[error("no action enabled at node {0}")]
    NotEnabled(NodeId),

    #[error("malformed lock interval on {key}: release {release} is not after acquire {acquire}")]
    MalformedInterval {
        key: String,
        acquire: u64,
        release: u64,
    },

    #[error("cvf record {index} is missing instrumentation field `{field}`")]
    MissingInstrumentation { index: usize, field: &'static str },

    #[error("baseline mode {0} missing from comparison input")]
    MissingBaseline(String),

    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
