//! Peterson locks on cross-partition edges, stored as ordinary keys.
//!
//! Each record packs both contenders' flags and the turn variable into one
//! payload; every protocol step is a read-modify-write of the whole record.
//! Contender 0 is the client owning the lower-id endpoint.

use std::fmt;
use std::str::FromStr;

use crate::engine::{OpKind, OpLog};
use crate::error::{Error, Result};
use crate::graph::{ClientId, Graph, NodeId, Partitioning};
use crate::monitor::{HybridTs, LockEvent, LockUsage, Monitor};
use crate::sim::{ms, Time};
use crate::store::{GetResult, Key, Store, VersionedValue};

pub fn lock_key(i: NodeId, j: NodeId) -> Result<Key> {
    if i == j {
        return Err(Error::SelfLoopLock(i));
    }
    Ok(Key::Lock(i.min(j), i.max(j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LockRecord {
    pub flag: [bool; 2],
    pub turn: u8,
}

impl LockRecord {
    pub const INITIAL: LockRecord = LockRecord {
        flag: [false, false],
        turn: 0,
    };

    pub fn encode(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for LockRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", u8::from(self.flag[0]), u8::from(self.flag[1]), self.turn)
    }
}

impl FromStr for LockRecord {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Payload {
            payload: s.to_string(),
            msg: msg.to_string(),
        };
        let bit = |f: &str| match f {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad("lock fields must be 0 or 1")),
        };
        let fields: Vec<&str> = s.split('|').collect();
        let [f0, f1, t] = fields[..] else {
            return Err(bad("expected f0|f1|turn"));
        };
        Ok(LockRecord {
            flag: [bit(f0)? == 1, bit(f1)? == 1],
            turn: bit(t)?,
        })
    }
}

/// Waiting policy for the Peterson busy-wait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SpinPolicy {
    pub initial_backoff_us: Time,
    pub max_backoff_us: Time,
    /// Busy-wait reads per lock before giving up.
    pub max_spins: u32,
    /// Tries per protocol step before it counts as a store failure.
    pub op_attempts: u32,
}

impl Default for SpinPolicy {
    fn default() -> Self {
        SpinPolicy {
            initial_backoff_us: ms(1),
            max_backoff_us: ms(16),
            max_spins: 400,
            op_attempts: 3,
        }
    }
}

/// Held locks in acquisition order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LockSet {
    pub holder: ClientId,
    pub keys: Vec<Key>,
    pub acquired_at: Vec<Time>,
    /// Monitor timestamps of the acquisitions, when a monitor is attached.
    pub stamps: Vec<HybridTs>,
}

impl LockSet {
    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key_names(&self) -> Vec<String> {
        self.keys.iter().map(Key::to_string).collect()
    }
}

/// One completed possession of a lock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Possession {
    pub client: ClientId,
    pub key: Key,
    pub acquired: Time,
    pub released: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReleaseReport {
    pub intervals: Vec<Possession>,
    /// Keys whose exit write failed twice; the flag may remain set.
    pub abandoned: Vec<Key>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AcquireError {
    /// A store request failed mid-protocol. Held locks were released.
    Store { key: Key, release: ReleaseReport },
    /// The busy-wait budget ran out. Held locks were released.
    SpinBudget { key: Key, release: ReleaseReport },
}

impl AcquireError {
    pub fn release(&self) -> &ReleaseReport {
        match self {
            AcquireError::Store { release, .. } | AcquireError::SpinBudget { release, .. } => release,
        }
    }
}

/// What a lock operation needs to know about its caller.
#[derive(Clone)]
pub struct LockCtx<'a> {
    pub store: &'a Store,
    pub client: ClientId,
    pub graph: &'a Graph,
    pub partitioning: &'a Partitioning,
    pub spin: SpinPolicy,
    pub oplog: Option<&'a OpLog>,
    /// Receives an event at every acquisition and release.
    pub monitor: Option<&'a Monitor>,
}

/// Lock keys needed to update `node` alone: every incident edge to a node
/// of another client.
pub fn update_keys(g: &Graph, p: &Partitioning, node: NodeId) -> Vec<Key> {
    batch_keys(g, p, &[node])
}

/// Lock keys for a batch: for each foreign neighbor of the batch, the
/// smallest edge joining it to the batch. Ascending edge order.
///
/// If two batches of different clients are adjacent, both pick the smallest
/// edge between them, so they always contend on a common lock.
pub fn batch_keys(g: &Graph, p: &Partitioning, nodes: &[NodeId]) -> Vec<Key> {
    let mut best: std::collections::BTreeMap<NodeId, (NodeId, NodeId)> = Default::default();
    for &u in nodes {
        for &w in g.neighbors(u) {
            if p.same_owner(u, w) {
                continue;
            }
            let e = (u.min(w), u.max(w));
            best.entry(w).and_modify(|b| *b = (*b).min(e)).or_insert(e);
        }
    }
    let mut keys: Vec<Key> = best.into_values().map(|(a, b)| Key::Lock(a, b)).collect();
    keys.sort();
    keys.dedup();
    keys
}

/// `(contender index of client, contender clients)` for a lock key.
fn contenders(ctx: &LockCtx<'_>, key: &Key) -> ([ClientId; 2], usize) {
    let Key::Lock(a, b) = *key else {
        panic!("{key} is not a lock key");
    };
    let who = [ctx.partitioning.owner(a), ctx.partitioning.owner(b)];
    let me = if who[0] == ctx.client { 0 } else { 1 };
    debug_assert_eq!(who[me], ctx.client, "client {} does not contend for {key}", ctx.client);
    (who, me)
}

/// Merges sibling versions field by field: each flag comes from the version
/// carrying its owner's latest write, the turn from the resolved version.
pub fn merged_record(read: &GetResult, who: [ClientId; 2]) -> Result<LockRecord> {
    let mut rec: LockRecord = read.resolved.payload.parse()?;
    for (s, c) in who.iter().enumerate() {
        let latest: &VersionedValue = read
            .all_versions
            .iter()
            .max_by_key(|v| (v.vclock.get(*c), v.physical_ts))
            .expect("reads return at least one version");
        rec.flag[s] = latest.payload.parse::<LockRecord>()?.flag[s];
    }
    Ok(rec)
}

async fn read_once(ctx: &LockCtx<'_>, key: &Key, who: [ClientId; 2]) -> Option<LockRecord> {
    let r = ctx.store.get(ctx.client, key).await;
    if let Some(log) = ctx.oplog {
        log.record(ctx.store.sim().now(), OpKind::LockGet, r.success);
    }
    if !r.success {
        return None;
    }
    merged_record(&r, who).ok()
}

async fn read(ctx: &LockCtx<'_>, key: &Key, who: [ClientId; 2]) -> Option<LockRecord> {
    for _ in 0..ctx.spin.op_attempts.max(1) {
        if let Some(r) = read_once(ctx, key, who).await {
            return Some(r);
        }
    }
    None
}

/// Read-modify-write of the whole record. A failed PUT is redone from a
/// fresh read; every step here is idempotent.
async fn rmw(ctx: &LockCtx<'_>, key: &Key, who: [ClientId; 2], f: impl Fn(&mut LockRecord)) -> bool {
    for _ in 0..ctx.spin.op_attempts.max(1) {
        let Some(mut rec) = read(ctx, key, who).await else {
            return false;
        };
        f(&mut rec);
        let r = ctx.store.put(ctx.client, key, rec.encode()).await;
        if let Some(log) = ctx.oplog {
            log.record(ctx.store.sim().now(), OpKind::LockPut, r.success);
        }
        if r.success {
            return true;
        }
    }
    false
}

enum EntryFailure {
    Store,
    Spin,
}

async fn enter(ctx: &LockCtx<'_>, key: &Key) -> std::result::Result<(), EntryFailure> {
    let (who, me) = contenders(ctx, key);
    let other = 1 - me;
    if !rmw(ctx, key, who, |r| r.flag[me] = true).await {
        return Err(EntryFailure::Store);
    }
    if !rmw(ctx, key, who, |r| {
        r.flag[me] = true;
        r.turn = other as u8;
    })
    .await
    {
        return Err(EntryFailure::Store);
    }
    let mut backoff = ctx.spin.initial_backoff_us.max(1);
    for _ in 0..=ctx.spin.max_spins {
        match read(ctx, key, who).await {
            Some(r) if !r.flag[other] || r.turn == me as u8 => return Ok(()),
            None => return Err(EntryFailure::Store),
            Some(_) => {}
        }
        ctx.store.sim().sleep(backoff).await;
        backoff = (backoff * 2).min(ctx.spin.max_backoff_us.max(1));
    }
    Err(EntryFailure::Spin)
}

async fn exit(ctx: &LockCtx<'_>, key: &Key) -> bool {
    let (who, me) = contenders(ctx, key);
    for _ in 0..2 {
        if rmw(ctx, key, who, |r| r.flag[me] = false).await {
            return true;
        }
    }
    false
}

/// Runs the entry protocol for each key in order. On failure everything
/// held so far, plus the failing key's flag, is released.
pub async fn acquire_keys(ctx: &LockCtx<'_>, keys: Vec<Key>) -> std::result::Result<LockSet, AcquireError> {
    let mut held = LockSet {
        holder: ctx.client,
        keys: Vec::with_capacity(keys.len()),
        acquired_at: Vec::with_capacity(keys.len()),
        stamps: Vec::new(),
    };
    for key in keys {
        match enter(ctx, &key).await {
            Ok(()) => {
                if let Some(m) = ctx.monitor {
                    held.stamps.push(m.acquired(ctx.client, key.clone()));
                }
                held.keys.push(key);
                held.acquired_at.push(ctx.store.sim().now());
            }
            Err(fail) => {
                let mut release = release(ctx, held).await;
                if !exit(ctx, &key).await {
                    release.abandoned.push(key.clone());
                }
                return Err(match fail {
                    EntryFailure::Store => AcquireError::Store { key, release },
                    EntryFailure::Spin => AcquireError::SpinBudget { key, release },
                });
            }
        }
    }
    Ok(held)
}

pub async fn acquire_update(ctx: &LockCtx<'_>, node: NodeId) -> Result<std::result::Result<LockSet, AcquireError>> {
    acquire_batch(ctx, &[node]).await
}

pub async fn acquire_batch(ctx: &LockCtx<'_>, nodes: &[NodeId]) -> Result<std::result::Result<LockSet, AcquireError>> {
    if let Some(&node) = nodes.iter().find(|&&v| ctx.partitioning.owner(v) != ctx.client) {
        return Err(Error::NotOwner {
            client: ctx.client.0,
            node,
        });
    }
    Ok(acquire_keys(ctx, batch_keys(ctx.graph, ctx.partitioning, nodes)).await)
}

/// Exit protocol for every held key, in reverse acquisition order.
pub async fn release(ctx: &LockCtx<'_>, held: LockSet) -> ReleaseReport {
    release_with(ctx, held, |_| LockUsage::default()).await
}

/// [`release`], reporting `usage(key)` to the monitor with each release.
pub async fn release_with(ctx: &LockCtx<'_>, held: LockSet, usage: impl Fn(&Key) -> LockUsage) -> ReleaseReport {
    let mut report = ReleaseReport::default();
    let mut stamps = held.stamps;
    for (key, acquired) in held.keys.into_iter().zip(held.acquired_at).rev() {
        let released = ctx.store.sim().now();
        if let (Some(m), Some(acquire)) = (ctx.monitor, stamps.pop()) {
            let u = usage(&key);
            // No data access under this lock: an empty interval at release.
            let first = u.first_access.unwrap_or(released);
            m.released(LockEvent {
                client: held.holder,
                key: key.clone(),
                acquire,
                release: m.stamp(held.holder),
                first_access: Some(first),
                last_access: Some(u.last_access.unwrap_or(first)),
                first_put: u.first_put,
                written: u.written,
            });
        }
        if !exit(ctx, &key).await {
            report.abandoned.push(key.clone());
        }
        report.intervals.push(Possession {
            client: held.holder,
            key,
            acquired,
            released,
        });
    }
    report
}

/// Pairs of possessions of one key by different clients that overlap under
/// closed-open interval semantics.
pub fn overlapping_possessions(all: &[Possession]) -> Vec<(Possession, Possession)> {
    let mut by_key: std::collections::BTreeMap<&Key, Vec<&Possession>> = Default::default();
    // An empty possession covers no instant.
    for p in all.iter().filter(|p| p.released > p.acquired) {
        by_key.entry(&p.key).or_default().push(p);
    }
    let mut out = Vec::new();
    for (_, mut list) in by_key {
        list.sort_by_key(|p| (p.acquired, p.released));
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                if b.acquired >= a.released {
                    break;
                }
                if a.client != b.client {
                    out.push(((*a).clone(), (*b).clone()));
                }
            }
        }
    }
    out
}

/// Peterson stress: two contenders per edge over `edges` disjoint edges,
/// each contender acquiring its edge `acquisitions` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LockStressSpec {
    pub edges: usize,
    pub acquisitions: usize,
    /// Time spent holding the lock on each acquisition.
    pub hold_us: Time,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockStressReport {
    pub possessions: Vec<Possession>,
    /// Acquisition attempts that gave up (store failure or spin budget).
    pub failed: usize,
}

/// Runs a [`LockStressSpec`] to completion on `store`'s simulator. Edge `i`
/// joins nodes `2i` and `2i + 1`, each owned by its own client.
pub fn run_lock_stress(store: &Store, spec: LockStressSpec) -> Result<LockStressReport> {
    let n = 2 * spec.edges;
    let g = std::rc::Rc::new(Graph::from_edges(n, (0..spec.edges as NodeId).map(|i| (2 * i, 2 * i + 1)))?);
    let owners: Vec<ClientId> = (0..n as u32).map(ClientId).collect();
    let p = std::rc::Rc::new(Partitioning::from_owners(crate::graph::Scheme::FromFile, owners, n)?);
    store.set_initial(|_| LockRecord::INITIAL.encode().into());
    let tasks: Vec<_> = (0..n as u32)
        .map(|c| {
            let (s, g, p) = (store.clone(), g.clone(), p.clone());
            store.sim().spawn(async move {
                let ctx = LockCtx {
                    store: &s,
                    client: ClientId(c),
                    graph: &g,
                    partitioning: &p,
                    spin: SpinPolicy::default(),
                    oplog: None,
                    monitor: None,
                };
                let mut out = LockStressReport::default();
                for _ in 0..spec.acquisitions {
                    match acquire_update(&ctx, c).await {
                        Ok(Ok(held)) => {
                            s.sim().sleep(spec.hold_us).await;
                            out.possessions.extend(release(&ctx, held).await.intervals);
                        }
                        Ok(Err(e)) => {
                            out.failed += 1;
                            out.possessions.extend(e.release().intervals.iter().cloned());
                        }
                        Err(_) => out.failed += 1,
                    }
                }
                out
            })
        })
        .collect();
    let parts = store.sim().block_on(futures::future::join_all(tasks));
    let mut report = LockStressReport::default();
    for part in parts {
        report.possessions.extend(part.possessions);
        report.failed += part.failed;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{partition, Scheme};
    use crate::sim::{Sim, TimeMode};
    use crate::store::StoreConfig;
    use proptest::prelude::*;

    /// The example graph around nodes 5 and 6.
    fn fig_graph() -> (Graph, Partitioning) {
        let g = Graph::from_edges(21, [(1, 5), (5, 9), (5, 20), (5, 6), (1, 6), (6, 9)]).unwrap();
        let mut owner = vec![ClientId(1); 21];
        owner[5] = ClientId(0);
        owner[6] = ClientId(0);
        let p = Partitioning::from_owners(Scheme::FromFile, owner, 2).unwrap();
        (g, p)
    }

    #[test]
    fn key_spelling() {
        assert_eq!(lock_key(6, 1).unwrap().to_string(), "L_1_6");
        assert_eq!(lock_key(5, 6).unwrap().to_string(), "L_5_6");
        assert_eq!(lock_key(9, 6).unwrap().to_string(), "L_6_9");
        assert!(matches!(lock_key(3, 3), Err(Error::SelfLoopLock(3))));
    }

    #[test]
    fn record_roundtrip_and_errors() {
        let r = LockRecord {
            flag: [true, false],
            turn: 1,
        };
        assert_eq!(r.encode(), "1|0|1");
        assert_eq!("1|0|1".parse::<LockRecord>().unwrap(), r);
        assert!("1|0".parse::<LockRecord>().is_err());
        assert!("1|2|0".parse::<LockRecord>().is_err());
    }

    #[test]
    fn update_and_batch_key_sets() {
        let (g, mut p) = fig_graph();
        let names = |k: Vec<Key>| k.iter().map(Key::to_string).collect::<Vec<_>>();
        // node 6 alone when 5 belongs to someone else
        let mut owner = p.owners().to_vec();
        owner[5] = ClientId(1);
        let solo = Partitioning::from_owners(Scheme::FromFile, owner, 2).unwrap();
        assert_eq!(names(update_keys(&g, &solo, 6)), ["L_1_6", "L_5_6", "L_6_9"]);
        assert_eq!(names(update_keys(&g, &p, 6)), ["L_1_6", "L_6_9"]);
        assert_eq!(batch_keys(&g, &p, &[5, 6]).len(), 3);
        assert_eq!(batch_keys(&g, &p, &[6]), update_keys(&g, &p, 6));
        assert!(update_keys(&g, &p, 0).is_empty());
        p = partition(&g, Scheme::Normal, 1, 0, None).unwrap();
        assert!(batch_keys(&g, &p, &[5, 6]).is_empty());
    }

    #[test]
    fn adjacent_batches_share_a_lock() {
        let g = crate::graph::generate_planar(200, 3).unwrap();
        let p = partition(&g, Scheme::Random, 4, 3, None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::{seq::SliceRandom, SeedableRng};
        for _ in 0..200 {
            let pick = |c: u32, rng: &mut rand_chacha::ChaCha8Rng| {
                let mut v = p.nodes_of(ClientId(c)).to_vec();
                v.shuffle(rng);
                v.truncate(8);
                v
            };
            let a = pick(0, &mut rng);
            let b = pick(1, &mut rng);
            let touching = a.iter().any(|&u| b.iter().any(|&w| g.is_edge(u, w)));
            let ka = batch_keys(&g, &p, &a);
            let kb = batch_keys(&g, &p, &b);
            if touching {
                assert!(ka.iter().any(|k| kb.contains(k)));
            }
        }
    }

    #[test]
    fn acquire_and_release_order() {
        let (g, p) = fig_graph();
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let store = Store::new(&sim, StoreConfig::sequential(), 1).unwrap();
        store.set_initial(|_| LockRecord::INITIAL.encode().into());
        store.enable_log();
        let (s, gg, pp) = (store.clone(), g.clone(), p.clone());
        let report = sim.block_on(async move {
            let ctx = LockCtx {
                store: &s,
                client: ClientId(0),
                graph: &gg,
                partitioning: &pp,
                spin: SpinPolicy::default(),
                oplog: None,
                monitor: None,
            };
            let held = acquire_batch(&ctx, &[6]).await.unwrap().unwrap();
            assert_eq!(held.key_names(), ["L_1_6", "L_6_9"]);
            assert!(acquire_batch(&ctx, &[1]).await.is_err());
            s.sim().sleep(ms(5)).await;
            release(&ctx, held).await
        });
        assert!(report.abandoned.is_empty());
        let order: Vec<String> = report.intervals.iter().map(|i| i.key.to_string()).collect();
        assert_eq!(order, ["L_6_9", "L_1_6"]);
        assert!(report.intervals.iter().all(|i| i.acquired < i.released));
        // exit writes go out in the same reverse order
        let puts: Vec<String> = store
            .log_events()
            .unwrap()
            .iter()
            .filter(|e| e.kind == crate::store::LogKind::PutSend && e.replica == 0)
            .map(|e| e.key.to_string())
            .collect();
        assert_eq!(&puts[puts.len() - 2..], ["L_6_9", "L_1_6"]);
        assert_eq!(store.omniscient_value(&Key::Lock(6, 9)).payload.as_ref(), "0|0|1");
    }

    #[test]
    fn empty_release_is_silent() {
        let (g, p) = fig_graph();
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let store = Store::new(&sim, StoreConfig::sequential(), 1).unwrap();
        store.enable_log();
        let s = store.clone();
        let r = sim.block_on(async move {
            let ctx = LockCtx {
                store: &s,
                client: ClientId(0),
                graph: &g,
                partitioning: &p,
                spin: SpinPolicy::default(),
                oplog: None,
                monitor: None,
            };
            release(&ctx, LockSet::default()).await
        });
        assert_eq!(r, ReleaseReport::default());
        assert!(store.log_events().unwrap().is_empty());
    }

    #[test]
    fn two_contenders_exclude_each_other() {
        let g = Graph::from_edges(2, [(0, 1)]).unwrap();
        let p = partition(&g, Scheme::Normal, 2, 0, None).unwrap();
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let store = Store::new(&sim, StoreConfig::sequential().omission(0.05, 1), 7).unwrap();
        store.set_initial(|_| LockRecord::INITIAL.encode().into());
        let all = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
        let tasks: Vec<_> = (0..2u32)
            .map(|c| {
                let (s, g, p, all) = (store.clone(), g.clone(), p.clone(), all.clone());
                sim.spawn(async move {
                    let ctx = LockCtx {
                        store: &s,
                        client: ClientId(c),
                        graph: &g,
                        partitioning: &p,
                        spin: SpinPolicy::default(),
                        oplog: None,
                        monitor: None,
                    };
                    for _ in 0..200 {
                        if let Ok(Ok(held)) = acquire_update(&ctx, c).await {
                            s.sim().sleep(ms(3)).await;
                            let r = release(&ctx, held).await;
                            all.borrow_mut().extend(r.intervals);
                        }
                    }
                })
            })
            .collect();
        sim.block_on(futures::future::join_all(tasks));
        assert!(all.borrow().len() > 300);
        assert!(overlapping_possessions(&all.borrow()).is_empty());
    }

    #[test]
    fn overlap_detection_is_closed_open() {
        let p = |c, a, r| Possession {
            client: ClientId(c),
            key: Key::Lock(1, 6),
            acquired: a,
            released: r,
        };
        assert_eq!(overlapping_possessions(&[p(0, 0, 10), p(1, 5, 15)]).len(), 1);
        assert!(overlapping_possessions(&[p(0, 0, 10), p(1, 10, 15)]).is_empty());
        assert!(overlapping_possessions(&[p(0, 0, 10), p(0, 5, 15)]).is_empty());
    }

    proptest! {
        #[test]
        fn record_payload_roundtrip(f0 in any::<bool>(), f1 in any::<bool>(), turn in 0u8..2) {
            let r = LockRecord { flag: [f0, f1], turn };
            prop_assert_eq!(r.encode().parse::<LockRecord>().unwrap(), r);
        }
    }
}
