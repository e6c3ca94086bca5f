use std::cell::RefCell;
use std::rc::Rc;

use serde::Serialize;

use crate::graph::ClientId;
use crate::sim::{Time, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    Get,
    Put,
    LockGet,
    LockPut,
    Action,
}

impl OpKind {
    /// Store requests, lock traffic included.
    pub fn is_store_op(self) -> bool {
        self != OpKind::Action
    }

    pub fn is_lock(self) -> bool {
        matches!(self, OpKind::LockGet | OpKind::LockPut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpRecord {
    pub time: Time,
    pub kind: OpKind,
    pub ok: bool,
}

/// Per-client operation log. Cloning shares the underlying buffer.
#[derive(Debug, Clone)]
pub struct OpLog {
    client: ClientId,
    records: Rc<RefCell<Vec<OpRecord>>>,
}

impl OpLog {
    pub fn new(client: ClientId) -> Self {
        OpLog {
            client,
            records: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn client(&self) -> ClientId {
        self.client
    }

    pub fn record(&self, time: Time, kind: OpKind, ok: bool) {
        self.records.borrow_mut().push(OpRecord { time, kind, ok });
    }

    pub fn records(&self) -> Vec<OpRecord> {
        self.records.borrow().clone()
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.records.borrow().iter().filter(|r| r.kind == kind).count()
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputSeries {
    pub windows: Vec<(Time, f64)>,
    pub average: f64,
}

/// Store operations per second in consecutive windows starting at zero.
pub fn throughput_series(records: &[OpRecord], window: Time) -> ThroughputSeries {
    assert!(window > 0, "throughput window must be positive");
    let times: Vec<Time> = records.iter().filter(|r| r.kind.is_store_op()).map(|r| r.time).collect();
    let Some(&last) = times.iter().max() else {
        return ThroughputSeries {
            windows: Vec::new(),
            average: 0.0,
        };
    };
    let buckets = (last / window + 1) as usize;
    let mut counts = vec![0u64; buckets];
    for t in &times {
        counts[(t / window) as usize] += 1;
    }
    let per_sec = |n: u64| n as f64 * MICROS_PER_SEC as f64 / window as f64;
    ThroughputSeries {
        windows: counts.iter().enumerate().map(|(i, &n)| (i as Time * window, per_sec(n))).collect(),
        average: times.len() as f64 * MICROS_PER_SEC as f64 / (buckets as Time * window) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_ops_give_flat_series() {
        let records: Vec<OpRecord> = (0..100)
            .map(|i| OpRecord {
                time: i * 100_000,
                kind: if i % 2 == 0 { OpKind::Get } else { OpKind::Put },
                ok: true,
            })
            .collect();
        let s = throughput_series(&records, MICROS_PER_SEC);
        assert_eq!(s.windows.len(), 10);
        assert!(s.windows.iter().all(|&(_, r)| (r - 10.0).abs() < 1e-9));
        assert!((s.average - 10.0).abs() < 1e-9);
    }

    #[test]
    fn empty_log() {
        let s = throughput_series(&[], MICROS_PER_SEC);
        assert!(s.windows.is_empty());
        assert_eq!(s.average, 0.0);
    }

    #[test]
    fn actions_are_not_ops() {
        let log = OpLog::new(ClientId(0));
        log.record(0, OpKind::Action, true);
        log.record(0, OpKind::LockGet, true);
        let s = throughput_series(&log.records(), MICROS_PER_SEC);
        assert_eq!(s.windows, vec![(0, 1.0)]);
    }
}
