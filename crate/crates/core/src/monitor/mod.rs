//! Detection of overlapping lock possessions by different clients.
//!
//! Under a correct store two clients never hold the same edge lock at once,
//! so any overlap marks a consistency violating fault. The online monitor
//! receives acquire and release events over a fixed-delay channel and
//! notifies both parties as soon as an overlap is visible; [`ingest`] does
//! the same for complete intervals offline.

mod classify;

pub use classify::{annotate, classify, read_trace_csv, write_trace_csv, CvfAnalysis};

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::graph::{ClientId, NodeId};
use crate::sim::{Sim, Time, DEFAULT_CLASS};
use crate::store::Key;

/// `(physical, logical, client)`, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HybridTs {
    pub physical: Time,
    pub logical: u32,
    pub client: ClientId,
}

/// A client's possession of one lock plus what it did under it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockEvent {
    pub client: ClientId,
    pub key: Key,
    pub acquire: HybridTs,
    pub release: HybridTs,
    pub first_access: Option<Time>,
    pub last_access: Option<Time>,
    pub first_put: Option<Time>,
    /// Node and payload this client wrote for its own endpoint of the
    /// locked edge, if it wrote one.
    pub written: Option<(NodeId, String)>,
}

/// What a holder did with its data while holding one lock.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LockUsage {
    pub first_access: Option<Time>,
    pub last_access: Option<Time>,
    pub first_put: Option<Time>,
    pub written: Option<(NodeId, String)>,
}

/// One side of a detected overlap. Fields after `acquire` are filled when
/// the side's release is seen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Side {
    pub client: ClientId,
    pub acquire: HybridTs,
    pub release: Option<HybridTs>,
    pub first_access: Option<Time>,
    pub last_access: Option<Time>,
    pub written: Option<(NodeId, String)>,
}

impl Side {
    fn open(client: ClientId, acquire: HybridTs) -> Side {
        Side {
            client,
            acquire,
            release: None,
            first_access: None,
            last_access: None,
            written: None,
        }
    }

    fn from_event(e: &LockEvent) -> Side {
        let mut s = Side::open(e.client, e.acquire);
        s.close(e);
        s
    }

    fn close(&mut self, e: &LockEvent) {
        self.release = Some(e.release);
        self.first_access = e.first_access;
        self.last_access = e.last_access;
        self.written = e.written.clone();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvfRecord {
    pub id: u64,
    pub key: Key,
    /// The side that acquired first.
    pub a: Side,
    pub b: Side,
    pub access_overlap: Option<bool>,
    pub output_conflict: Option<bool>,
}

impl CvfRecord {
    pub fn clients(&self) -> (ClientId, ClientId) {
        (self.a.client, self.b.client)
    }
}

/// Sent to both clients of a detected overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub record: u64,
    pub key: Key,
    pub sent_at: Time,
}

fn validate(e: &LockEvent) -> Result<()> {
    if e.release <= e.acquire {
        return Err(Error::MalformedInterval {
            key: e.key.to_string(),
            acquire: e.acquire.physical,
            release: e.release.physical,
        });
    }
    Ok(())
}

/// Offline detector over complete intervals.
#[derive(Debug, Default)]
pub struct IntervalIndex {
    by_key: HashMap<Key, Vec<LockEvent>>,
    next_id: u64,
}

impl IntervalIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every overlap between `e` and previously ingested intervals of other
    /// clients on the same key. Intervals are closed-open.
    pub fn ingest(&mut self, e: LockEvent) -> Result<Vec<CvfRecord>> {
        validate(&e)?;
        let list = self.by_key.entry(e.key.clone()).or_default();
        let mut out = Vec::new();
        for prev in list.iter() {
            let overlap = prev.client != e.client
                && prev.acquire.physical < e.release.physical
                && e.acquire.physical < prev.release.physical;
            if overlap {
                let (a, b) = if prev.acquire <= e.acquire { (prev, &e) } else { (&e, prev) };
                out.push(CvfRecord {
                    id: self.next_id,
                    key: e.key.clone(),
                    a: Side::from_event(a),
                    b: Side::from_event(b),
                    access_overlap: None,
                    output_conflict: None,
                });
                self.next_id += 1;
            }
        }
        list.push(e);
        Ok(out)
    }
}

/// Single-call form of [`IntervalIndex::ingest`].
pub fn ingest(index: &mut IntervalIndex, e: LockEvent) -> Result<Vec<CvfRecord>> {
    index.ingest(e)
}

#[derive(Default)]
struct State {
    /// Open possessions per key: `(client, acquire, records touching it)`.
    open: HashMap<Key, Vec<(ClientId, HybridTs, Vec<u64>)>>,
    records: BTreeMap<u64, CvfRecord>,
    mailboxes: HashMap<ClientId, Vec<Notification>>,
    logical: HashMap<ClientId, (Time, u32)>,
    rejected: Vec<Error>,
    events: u64,
    /// Releases seen before their own acquire (empty possessions).
    early_releases: HashSet<(ClientId, HybridTs)>,
}

/// Online monitor actor.
#[derive(Clone)]
pub struct Monitor {
    sim: Sim,
    delay: Time,
    state: Rc<RefCell<State>>,
}

/// Releases are delivered ahead of acquires stamped with the same instant,
/// matching the closed-open interval convention.
const RELEASE_CLASS: u8 = DEFAULT_CLASS - 2;
const ACQUIRE_CLASS: u8 = DEFAULT_CLASS - 1;

impl Monitor {
    pub fn new(sim: &Sim, delay: Time) -> Monitor {
        Monitor {
            sim: sim.clone(),
            delay,
            state: Rc::new(RefCell::new(State::default())),
        }
    }

    /// Hybrid timestamp for an event of `client` at the current instant.
    pub fn stamp(&self, client: ClientId) -> HybridTs {
        let now = self.sim.now();
        let mut st = self.state.borrow_mut();
        let slot = st.logical.entry(client).or_insert((now, 0));
        if slot.0 == now {
            slot.1 += 1;
        } else {
            *slot = (now, 0);
        }
        HybridTs {
            physical: now,
            logical: slot.1,
            client,
        }
    }

    /// Reports that `client` now holds `key`; returns the timestamp used.
    pub fn acquired(&self, client: ClientId, key: Key) -> HybridTs {
        let ts = self.stamp(client);
        let m = self.clone();
        self.sim
            .schedule_class(self.sim.now() + self.delay, ACQUIRE_CLASS, move || m.on_acquire(client, key, ts));
        ts
    }

    /// Reports the end of a possession together with its instrumentation.
    pub fn released(&self, event: LockEvent) {
        let m = self.clone();
        self.sim
            .schedule_class(self.sim.now() + self.delay, RELEASE_CLASS, move || m.on_release(event));
    }

    fn on_acquire(&self, client: ClientId, key: Key, ts: HybridTs) {
        let mut notify = Vec::new();
        {
            let mut st = self.state.borrow_mut();
            st.events += 1;
            if st.early_releases.remove(&(client, ts)) {
                return;
            }
            let mut mine = Vec::new();
            let others: Vec<(ClientId, HybridTs)> = st
                .open
                .get(&key)
                .map(|l| l.iter().filter(|o| o.0 != client).map(|o| (o.0, o.1)).collect())
                .unwrap_or_default();
            for (other, acq) in others {
                let id = st.records.len() as u64;
                st.records.insert(
                    id,
                    CvfRecord {
                        id,
                        key: key.clone(),
                        a: Side::open(other, acq),
                        b: Side::open(client, ts),
                        access_overlap: None,
                        output_conflict: None,
                    },
                );
                if let Some(entry) = st
                    .open
                    .get_mut(&key)
                    .and_then(|l| l.iter_mut().find(|o| o.0 == other && o.1 == acq))
                {
                    entry.2.push(id);
                }
                mine.push(id);
                notify.push((id, other));
                notify.push((id, client));
            }
            st.open.entry(key.clone()).or_default().push((client, ts, mine));
        }
        for (id, c) in notify {
            let m = self.clone();
            let key = key.clone();
            self.sim.schedule_in(self.delay, move || {
                let sent_at = m.sim.now();
                m.state.borrow_mut().mailboxes.entry(c).or_default().push(Notification {
                    record: id,
                    key,
                    sent_at,
                });
            });
        }
    }

    fn on_release(&self, e: LockEvent) {
        let mut st = self.state.borrow_mut();
        st.events += 1;
        if let Err(err) = validate(&e) {
            st.rejected.push(err);
        }
        let pos = st
            .open
            .get(&e.key)
            .and_then(|l| l.iter().position(|o| o.0 == e.client && o.1 == e.acquire));
        let Some(pos) = pos else {
            st.early_releases.insert((e.client, e.acquire));
            return;
        };
        let list = st.open.get_mut(&e.key).expect("position came from this list");
        let (_, _, ids) = list.swap_remove(pos);
        for id in ids {
            if let Some(r) = st.records.get_mut(&id) {
                let side = if r.a.client == e.client && r.a.acquire == e.acquire {
                    &mut r.a
                } else {
                    &mut r.b
                };
                side.close(&e);
            }
        }
    }

    /// Drains `client`'s pending notifications.
    pub fn take_notifications(&self, client: ClientId) -> Vec<Notification> {
        self.state.borrow_mut().mailboxes.remove(&client).unwrap_or_default()
    }

    pub fn has_notifications(&self, client: ClientId) -> bool {
        self.state.borrow().mailboxes.get(&client).is_some_and(|m| !m.is_empty())
    }

    pub fn records(&self) -> Vec<CvfRecord> {
        self.state.borrow().records.values().cloned().collect()
    }

    pub fn rejected(&self) -> usize {
        self.state.borrow().rejected.len()
    }

    pub fn sim_handle(&self) -> &Sim {
        &self.sim
    }

    pub fn events_seen(&self) -> u64 {
        self.state.borrow().events
    }
}
