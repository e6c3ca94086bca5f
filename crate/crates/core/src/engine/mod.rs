//! Client workers: each repeatedly sweeps its own nodes in batches,
//! locking, reading, executing and writing through the store.

mod oplog;

pub use oplog::{throughput_series, OpKind, OpLog, OpRecord, ThroughputSeries};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::rc::Rc;
use std::str::FromStr;

use futures::future::join_all;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{execute, NodeState, Program, ProgramKind};
use crate::error::{Error, Result};
use crate::graph::{ClientId, Graph, NodeId, Partitioning};
use crate::locks::{acquire_batch, release_with, LockCtx, LockSet, Possession, SpinPolicy};
use crate::monitor::{LockUsage, Monitor};
use crate::sim::{ms, Flag, Time};
use crate::store::{GetResult, Key, Store, VersionedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutionMode {
    #[serde(rename = "SEQ")]
    Seq,
    #[serde(rename = "EVE_S")]
    EveS,
    #[serde(rename = "EVE_AS")]
    EveAs,
    #[serde(rename = "ROLLBACK")]
    Rollback,
}

impl ExecutionMode {
    pub const ALL: [ExecutionMode; 4] = [
        ExecutionMode::Seq,
        ExecutionMode::EveS,
        ExecutionMode::EveAs,
        ExecutionMode::Rollback,
    ];

    pub fn sequential_consistency(self) -> bool {
        self == ExecutionMode::Seq
    }

    pub fn locks_enabled(self) -> bool {
        self != ExecutionMode::EveAs
    }

    pub fn monitors_enabled(self) -> bool {
        self == ExecutionMode::Rollback
    }

    /// Name used in tables and plot labels.
    pub fn label(self) -> &'static str {
        match self {
            ExecutionMode::Seq => "SEQ",
            ExecutionMode::EveS => "EVE-S",
            ExecutionMode::EveAs => "EVE-AS",
            ExecutionMode::Rollback => "Rollback",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            ExecutionMode::Seq => "SEQ",
            ExecutionMode::EveS => "EVE_S",
            ExecutionMode::EveAs => "EVE_AS",
            ExecutionMode::Rollback => "ROLLBACK",
        }
    }
}

impl fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ExecutionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        ExecutionMode::ALL
            .into_iter()
            .find(|m| m.code() == norm)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub client: ClientId,
    /// Own nodes in scan order.
    pub nodes: Vec<NodeId>,
    pub batch_size: usize,
    pub heuristic_enabled: bool,
    pub random_color: bool,
    pub epsilon: Time,
    pub seed: u64,
    /// Pause after a sweep in which nothing changed.
    pub idle_delay_us: Time,
    /// Upper bound of the random pause before restarting an aborted batch.
    pub abort_backoff_us: Time,
    pub spin: SpinPolicy,
}

impl ClientConfig {
    pub fn new(client: ClientId, nodes: Vec<NodeId>, seed: u64) -> Self {
        ClientConfig {
            client,
            nodes,
            batch_size: 8,
            heuristic_enabled: false,
            random_color: false,
            epsilon: 0,
            seed,
            idle_delay_us: 0,
            abort_backoff_us: ms(10),
            spin: SpinPolicy::default(),
        }
    }
}

/// Heuristic skip test: the node changed after its neighbors last did,
/// allowing for the duration of that change and clock error.
pub fn should_skip(local: &NodeState, epsilon: Time) -> bool {
    local.nd_change > local.nbr_change + local.delta + epsilon
}

/// Folds sibling versions of a node into one state. Fields the owner writes
/// come from the version holding the owner's latest write; `nbr_change` is
/// the newest seen on any sibling.
pub fn merge_node_versions(kind: ProgramKind, owner: ClientId, versions: &[VersionedValue]) -> Result<NodeState> {
    let latest = versions
        .iter()
        .max_by_key(|v| (v.vclock.get(owner), v.physical_ts, v.origin))
        .ok_or(Error::EmptyVersions)?;
    let mut state = NodeState::decode(kind, &latest.payload)?;
    for v in versions {
        state.nbr_change = state.nbr_change.max(NodeState::decode(kind, &v.payload)?.nbr_change);
    }
    Ok(state)
}

/// Every node's state as a read of all replicas would merge it.
pub fn omniscient_states(store: &Store, kind: ProgramKind, g: &Graph, p: &Partitioning) -> Result<Vec<NodeState>> {
    g.nodes()
        .map(|v| {
            let key = Key::Node(v);
            let mut versions = store.omniscient_versions(&key);
            if versions.is_empty() {
                versions.push(store.initial_value(&key));
            }
            merge_node_versions(kind, p.owner(v), &versions)
        })
        .collect()
}

/// Sets what unwritten keys read as: `states[v]` for node `v`, an
/// unheld record for every lock.
pub fn install_initial_states(store: &Store, states: &[NodeState]) {
    let encoded: Vec<Rc<str>> = states.iter().map(|s| Rc::from(s.encode())).collect();
    store.set_initial(move |key| match key {
        Key::Node(v) => encoded.get(*v as usize).cloned().unwrap_or_else(|| Rc::from("")),
        Key::Lock(..) => Rc::from(crate::locks::LockRecord::INITIAL.encode()),
        Key::Other(_) => Rc::from(""),
    });
}

/// Shared handles a worker runs against.
#[derive(Clone)]
pub struct ClientEnv {
    pub program: Program,
    pub graph: Rc<Graph>,
    pub partitioning: Rc<Partitioning>,
    pub store: Store,
    pub monitor: Option<Monitor>,
    pub stop: Flag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipRecord {
    pub time: Time,
    pub node: NodeId,
    pub nd_change: Time,
    pub delta: Time,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClientRunReport {
    pub client: u32,
    pub sweeps: u64,
    pub actions_executed: u64,
    pub gets: u64,
    pub puts: u64,
    pub lock_acquires: u64,
    pub skips: u64,
    pub cvf_notifications: u64,
    pub aborts: u64,
    #[serde(skip)]
    pub evaluations: u64,
    #[serde(skip)]
    pub reenqueued: u64,
    #[serde(skip)]
    pub late_notifications: u64,
    #[serde(skip)]
    pub failed_batches: u64,
    #[serde(skip)]
    pub abandoned_locks: u64,
    #[serde(skip)]
    pub possessions: Vec<Possession>,
    #[serde(skip)]
    pub skip_log: Vec<SkipRecord>,
    #[serde(skip)]
    pub ops: Vec<OpRecord>,
}

impl ClientRunReport {
    fn new(client: ClientId) -> Self {
        ClientRunReport {
            client: client.0,
            sweeps: 0,
            actions_executed: 0,
            gets: 0,
            puts: 0,
            lock_acquires: 0,
            skips: 0,
            cvf_notifications: 0,
            aborts: 0,
            evaluations: 0,
            reenqueued: 0,
            late_notifications: 0,
            failed_batches: 0,
            abandoned_locks: 0,
            possessions: Vec::new(),
            skip_log: Vec::new(),
            ops: Vec::new(),
        }
    }
}

pub fn write_client_reports_csv(reports: &[ClientRunReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if reports.is_empty() {
        w.write_record([
            "client",
            "sweeps",
            "actions_executed",
            "gets",
            "puts",
            "lock_acquires",
            "skips",
            "cvf_notifications",
            "aborts",
        ])?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

enum Outcome {
    Done,
    Failed,
}

struct Worker {
    cfg: ClientConfig,
    mode: ExecutionMode,
    env: ClientEnv,
    program: Program,
    rng: ChaCha8Rng,
    oplog: OpLog,
    report: ClientRunReport,
    pending: VecDeque<Vec<NodeId>>,
    cursor: usize,
    seen: HashSet<u64>,
    /// Nodes of the last batch that held each lock.
    key_batches: HashMap<Key, Vec<NodeId>>,
    changed_this_sweep: bool,
    /// Freshest state of each node this client has read or written, keyed
    /// by the owner's clock entry. Reads older than this are replaced by it.
    freshest: HashMap<NodeId, (u32, NodeState)>,
}

/// Runs one client until the stop flag is observed at a batch boundary.
pub async fn run_client(cfg: ClientConfig, mode: ExecutionMode, env: ClientEnv) -> Result<ClientRunReport> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if let Some(&node) = cfg.nodes.iter().find(|&&v| env.partitioning.owner(v) != cfg.client) {
        return Err(Error::NotOwner { client: cfg.client.0, node });
    }
    let program = env.program.with_random_color(cfg.random_color || env.program.random_color);
    let mut w = Worker {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        oplog: OpLog::new(cfg.client),
        report: ClientRunReport::new(cfg.client),
        program,
        mode,
        env,
        pending: VecDeque::new(),
        cursor: 0,
        seen: HashSet::new(),
        key_batches: HashMap::new(),
        changed_this_sweep: false,
        freshest: HashMap::new(),
        cfg,
    };
    if w.cfg.nodes.is_empty() {
        w.env.stop.wait().await;
    }
    while !w.env.stop.is_set() && !w.cfg.nodes.is_empty() {
        w.drain_late_notifications();
        let batch = w.next_batch().await;
        match w.run_batch(&batch).await? {
            Outcome::Done => {}
            Outcome::Failed => w.report.failed_batches += 1,
        }
    }
    w.report.ops = w.oplog.records();
    Ok(w.report)
}

impl Worker {
    fn now(&self) -> Time {
        self.env.store.sim().now()
    }

    async fn next_batch(&mut self) -> Vec<NodeId> {
        if let Some(b) = self.pending.pop_front() {
            return b;
        }
        if self.cursor >= self.cfg.nodes.len() {
            self.cursor = 0;
            self.report.sweeps += 1;
            if !std::mem::take(&mut self.changed_this_sweep) && self.cfg.idle_delay_us > 0 {
                self.env.store.sim().sleep(self.cfg.idle_delay_us).await;
            }
        }
        let end = (self.cursor + self.cfg.batch_size).min(self.cfg.nodes.len());
        let b = self.cfg.nodes[self.cursor..end].to_vec();
        self.cursor = end;
        b
    }

    fn requeue(&mut self, nodes: Vec<NodeId>) {
        if !self.pending.contains(&nodes) {
            self.report.reenqueued += 1;
            self.pending.push_back(nodes);
        }
    }

    /// Handles notifications about batches that already finished.
    fn drain_late_notifications(&mut self) {
        let Some(m) = self.env.monitor.clone() else { return };
        for n in m.take_notifications(self.cfg.client) {
            if !self.seen.insert(n.record) {
                continue;
            }
            self.report.cvf_notifications += 1;
            self.report.late_notifications += 1;
            if let Some(nodes) = self.key_batches.get(&n.key).cloned() {
                self.requeue(nodes);
            }
        }
    }

    /// New notifications touching a currently held key. Others are treated
    /// as late.
    fn current_notified(&mut self, held: &LockSet) -> bool {
        let Some(m) = self.env.monitor.clone() else { return false };
        if !m.has_notifications(self.cfg.client) {
            return false;
        }
        let mut hit = false;
        for n in m.take_notifications(self.cfg.client) {
            if !self.seen.insert(n.record) {
                continue;
            }
            self.report.cvf_notifications += 1;
            if held.keys.contains(&n.key) {
                hit = true;
            } else {
                self.report.late_notifications += 1;
                if let Some(nodes) = self.key_batches.get(&n.key).cloned() {
                    self.requeue(nodes);
                }
            }
        }
        hit
    }

    /// Monotonic reads. Only the owner writes a node's variables, so its
    /// clock entry orders them; a read older than what this client already
    /// saw or wrote yields the earlier state.
    fn monotonic_read(&mut self, v: NodeId, r: &GetResult) -> Option<NodeState> {
        let owner = self.env.partitioning.owner(v);
        let state = merge_node_versions(self.program.kind, owner, &r.all_versions).ok()?;
        let seen = r.all_versions.iter().map(|x| x.vclock.get(owner)).max().unwrap_or(0);
        match self.freshest.get(&v) {
            Some((known, prev)) if seen < *known => Some(NodeState {
                nbr_change: state.nbr_change.max(prev.nbr_change),
                ..*prev
            }),
            _ => {
                self.freshest.insert(v, (seen, state));
                Some(state)
            }
        }
    }

    /// Concurrent GETs of `nodes`. `None` if any of them failed.
    async fn get_nodes(&mut self, nodes: &[NodeId], access: &mut Access) -> Option<Vec<NodeState>> {
        if nodes.is_empty() {
            return Some(Vec::new());
        }
        access.first.get_or_insert(self.now());
        let (store, me, oplog) = (&self.env.store, self.cfg.client, &self.oplog);
        let replies = join_all(nodes.iter().map(|&v| async move {
            let r = store.get(me, &Key::Node(v)).await;
            oplog.record(store.sim().now(), OpKind::Get, r.success);
            r
        }))
        .await;
        access.last = Some(self.now());
        self.report.gets += replies.len() as u64;
        let mut out = Vec::with_capacity(nodes.len());
        for (&v, r) in nodes.iter().zip(&replies) {
            if !r.success {
                return None;
            }
            out.push(self.monotonic_read(v, r)?);
        }
        Some(out)
    }

    async fn get_node(&mut self, v: NodeId, access: &mut Access) -> Option<NodeState> {
        self.get_nodes(&[v], access).await.map(|mut s| s.remove(0))
    }

    /// Concurrent PUTs, one acknowledgement flag per write.
    async fn put_nodes(&mut self, writes: &[(NodeId, NodeState)], access: &mut Access) -> Vec<bool> {
        if writes.is_empty() {
            return Vec::new();
        }
        access.first.get_or_insert(self.now());
        let (store, me, oplog) = (&self.env.store, self.cfg.client, &self.oplog);
        let results = join_all(writes.iter().map(|(v, state)| async move {
            let r = store.put(me, &Key::Node(*v), state.encode()).await;
            oplog.record(store.sim().now(), OpKind::Put, r.success);
            r
        }))
        .await;
        access.last = Some(self.now());
        self.report.puts += results.len() as u64;
        for ((v, state), r) in writes.iter().zip(&results) {
            let owner = self.env.partitioning.owner(*v);
            if r.success && owner == me {
                self.freshest.insert(*v, (r.version.vclock.get(me), *state));
            }
        }
        results.iter().map(|r| r.success).collect()
    }

    async fn put_node(&mut self, v: NodeId, state: &NodeState, access: &mut Access) -> bool {
        self.put_nodes(&[(v, *state)], access).await[0]
    }

    async fn release(&mut self, held: LockSet, access: &Access, written: &BTreeMap<NodeId, String>) {
        if held.is_empty() {
            return;
        }
        let ctx = LockCtx {
            store: &self.env.store,
            client: self.cfg.client,
            graph: &self.env.graph,
            partitioning: &self.env.partitioning,
            spin: self.cfg.spin,
            oplog: Some(&self.oplog),
            monitor: self.env.monitor.as_ref(),
        };
        let p = &self.env.partitioning;
        let me = self.cfg.client;
        let rep = release_with(&ctx, held, |key| {
            let own = match key {
                Key::Lock(a, _) if p.owner(*a) == me => Some(*a),
                Key::Lock(_, b) => Some(*b),
                _ => None,
            };
            LockUsage {
                first_access: access.first,
                last_access: access.last,
                first_put: access.first_put,
                written: own.and_then(|v| written.get(&v).map(|s| (v, s.clone()))),
            }
        })
        .await;
        self.report.abandoned_locks += rep.abandoned.len() as u64;
        self.report.possessions.extend(rep.intervals);
    }

    async fn run_batch(&mut self, nodes: &[NodeId]) -> Result<Outcome> {
        let mut access = Access::default();
        let mut written = BTreeMap::new();
        let held = if self.mode.locks_enabled() {
            let ctx = LockCtx {
                store: &self.env.store,
                client: self.cfg.client,
                graph: &self.env.graph,
                partitioning: &self.env.partitioning,
                spin: self.cfg.spin,
                oplog: Some(&self.oplog),
                monitor: self.env.monitor.as_ref(),
            };
            match acquire_batch(&ctx, nodes).await? {
                Ok(h) => h,
                Err(e) => {
                    let rel = e.release().clone();
                    self.report.abandoned_locks += rel.abandoned.len() as u64;
                    self.report.possessions.extend(rel.intervals);
                    return Ok(Outcome::Failed);
                }
            }
        } else {
            LockSet::default()
        };
        self.report.lock_acquires += held.keys.len() as u64;
        for k in &held.keys {
            self.key_batches.insert(k.clone(), nodes.to_vec());
        }

        macro_rules! bail {
            ($outcome:expr) => {{
                self.release(held, &access, &written).await;
                return Ok($outcome);
            }};
        }

        // Read phase. A notification before the first PUT restarts it; the
        // locks stay held.
        let (t0, view, changed) = loop {
            let t0 = self.now();
            let mut view: HashMap<NodeId, NodeState> = HashMap::new();
            macro_rules! restart {
                () => {{
                    self.report.aborts += 1;
                    if self.env.stop.is_set() {
                        bail!(Outcome::Done);
                    }
                    let pause = self.rng.gen_range(0..=self.cfg.abort_backoff_us);
                    self.env.store.sim().sleep(pause).await;
                    continue;
                }};
            }
            if self.current_notified(&held) {
                restart!();
            }
            match self.get_nodes(nodes, &mut access).await {
                Some(states) => view.extend(nodes.iter().copied().zip(states)),
                None => bail!(Outcome::Failed),
            }
            let in_batch: BTreeSet<NodeId> = nodes.iter().copied().collect();
            let mut active = Vec::with_capacity(nodes.len());
            for &v in nodes {
                let s = view[&v];
                if self.cfg.heuristic_enabled && should_skip(&s, self.cfg.epsilon) {
                    self.report.skips += 1;
                    self.report.skip_log.push(SkipRecord {
                        time: t0,
                        node: v,
                        nd_change: s.nd_change,
                        delta: s.delta,
                    });
                } else {
                    active.push(v);
                }
            }
            let foreign: BTreeSet<NodeId> = active
                .iter()
                .flat_map(|&v| self.env.graph.neighbors(v).iter().copied())
                .filter(|k| !in_batch.contains(k))
                .collect();
            let foreign: Vec<NodeId> = foreign.into_iter().collect();
            if self.current_notified(&held) {
                restart!();
            }
            match self.get_nodes(&foreign, &mut access).await {
                Some(states) => view.extend(foreign.iter().copied().zip(states)),
                None => bail!(Outcome::Failed),
            }

            // Evaluate and execute against the local view.
            let mut changed = Vec::new();
            for &v in &active {
                self.report.evaluations += 1;
                let local = view[&v];
                match execute(&self.program, &self.env.graph, v, &local, &view, &mut self.rng) {
                    Ok(next) => {
                        self.report.actions_executed += 1;
                        self.oplog.record(self.now(), OpKind::Action, true);
                        if next.vars != local.vars {
                            view.insert(v, next);
                            changed.push(v);
                        }
                    }
                    Err(Error::NotEnabled(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            if self.current_notified(&held) {
                restart!();
            }

            break (t0, view, changed);
        };

        if self.env.stop.is_set() {
            bail!(Outcome::Done);
        }

        // Write phase.
        let now = self.now();
        let writes: Vec<(NodeId, NodeState)> = changed
            .iter()
            .map(|&v| {
                let mut s = view[&v];
                if self.cfg.heuristic_enabled {
                    s.nd_change = now;
                    s.delta = now - t0;
                }
                (v, s)
            })
            .collect();
        if !writes.is_empty() {
            access.first_put.get_or_insert(now);
        }
        let acks = self.put_nodes(&writes, &mut access).await;
        for ((v, s), _) in writes.iter().zip(&acks).filter(|(_, ok)| **ok) {
            written.insert(*v, s.encode());
        }
        if acks.contains(&false) {
            bail!(Outcome::Failed);
        }
        let mut notified = self.current_notified(&held);
        if !changed.is_empty() {
            self.changed_this_sweep = true;
        }
        if self.cfg.heuristic_enabled {
            let touched: BTreeSet<NodeId> = changed
                .iter()
                .flat_map(|&v| self.env.graph.neighbors(v).iter().copied())
                .collect();
            for k in touched {
                self.touch(k, &mut access).await;
            }
        }
        notified |= self.current_notified(&held);
        self.release(held, &access, &written).await;
        if notified {
            self.requeue(nodes.to_vec());
        }
        Ok(Outcome::Done)
    }

    /// Read-modify-write of `nbr_change` at `k`. Failures are not retried.
    async fn touch(&mut self, k: NodeId, access: &mut Access) {
        let Some(mut s) = self.get_node(k, access).await else { return };
        s.nbr_change = self.now();
        self.put_node(k, &s, access).await;
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Access {
    first: Option<Time>,
    last: Option<Time>,
    first_put: Option<Time>,
}
