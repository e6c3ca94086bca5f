use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::sim::{ms, Time, TimeMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyModel {
    pub one_way_us: Time,
    /// Uniform extra delay in `[0, jitter_us]` per message.
    pub jitter_us: Time,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            one_way_us: ms(5),
            jitter_us: ms(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaultModel {
    /// Probability that a message on a link is dropped.
    pub omission_prob: f64,
    /// Messages dropped in a row once an omission starts on a link.
    pub burst_len: u32,
}

impl Default for FaultModel {
    fn default() -> Self {
        FaultModel {
            omission_prob: 0.0,
            burst_len: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub n_replicas: usize,
    pub read_quorum: usize,
    pub write_quorum: usize,
    /// Per-round timeout; `None` means four one-way latencies.
    pub request_timeout_us: Option<Time>,
    pub latency: LatencyModel,
    pub faults: FaultModel,
    pub time_mode: TimeMode,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig::eventual()
    }
}

impl StoreConfig {
    pub fn with_quorums(n: usize, r: usize, w: usize) -> Self {
        StoreConfig {
            n_replicas: n,
            read_quorum: r,
            write_quorum: w,
            request_timeout_us: None,
            latency: LatencyModel::default(),
            faults: FaultModel::default(),
            time_mode: TimeMode::SimulatedDiscreteEvent,
        }
    }

    /// N3R1W3.
    pub fn sequential() -> Self {
        Self::with_quorums(3, 1, 3)
    }

    /// N3R1W1.
    pub fn eventual() -> Self {
        Self::with_quorums(3, 1, 1)
    }

    pub fn latency_ms(mut self, one_way: u64, jitter: u64) -> Self {
        self.latency = LatencyModel {
            one_way_us: ms(one_way),
            jitter_us: ms(jitter),
        };
        self
    }

    pub fn omission(mut self, prob: f64, burst_len: u32) -> Self {
        self.faults = FaultModel { omission_prob: prob, burst_len };
        self
    }

    pub fn is_sequential(&self) -> bool {
        let (n, r, w) = (self.n_replicas, self.read_quorum, self.write_quorum);
        w + r > n && 2 * w > n
    }

    pub fn is_eventual(&self) -> bool {
        self.write_quorum + self.read_quorum <= self.n_replicas
    }

    pub fn timeout(&self) -> Time {
        self.request_timeout_us.unwrap_or(4 * self.latency.one_way_us).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, r, w) = (self.n_replicas, self.read_quorum, self.write_quorum);
        if n == 0 || !(1..=n).contains(&r) || !(1..=n).contains(&w) {
            return Err(Error::InvalidStoreConfig(format!(
                "quorums must satisfy 1 <= R,W <= N (N={n}, R={r}, W={w})"
            )));
        }
        if !(0.0..=1.0).contains(&self.faults.omission_prob) {
            return Err(Error::InvalidStoreConfig(format!(
                "omission probability {} outside [0, 1]",
                self.faults.omission_prob
            )));
        }
        if self.faults.burst_len == 0 {
            return Err(Error::InvalidStoreConfig("burst length must be at least 1".into()));
        }
        Ok(())
    }
}

/// Store keys. Node states and lock records have fixed spellings, `n_5` and
/// `L_1_6`; anything else is free-form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Key {
    Node(NodeId),
    /// Endpoints stored as `(min, max)`.
    Lock(NodeId, NodeId),
    Other(Rc<str>),
}

impl Key {
    pub fn other(s: &str) -> Key {
        Key::Other(Rc::from(s))
    }

    pub fn is_node(&self) -> bool {
        matches!(self, Key::Node(_))
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Node(n) => write!(f, "n_{n}"),
            Key::Lock(a, b) => write!(f, "L_{a}_{b}"),
            Key::Other(s) => f.write_str(s),
        }
    }
}

impl FromStr for Key {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if let Some(n) = s.strip_prefix("n_").and_then(|r| r.parse().ok()) {
            return Ok(Key::Node(n));
        }
        if let Some((a, b)) = s.strip_prefix("L_").and_then(|r| r.split_once('_')) {
            if let (Ok(a), Ok(b)) = (a.parse::<NodeId>(), b.parse::<NodeId>()) {
                if a < b {
                    return Ok(Key::Lock(a, b));
                }
            }
        }
        Ok(Key::other(s))
    }
}
