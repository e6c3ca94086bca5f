//! Quorum-replicated versioned key-value store on the simulated transport.
//!
//! Each request goes to all N replicas and succeeds once enough of them
//! answer (R for reads, W for writes). A request that misses its quorum
//! within one timeout gets a second round, addressed only to replicas that
//! have not answered yet; round-one replies that arrive late still count.

mod config;
mod log;
mod stress;
mod version;

pub use config::{FaultModel, Key, LatencyModel, StoreConfig};
pub use log::{write_log_csv, Direction, LogEvent, LogKind, Op};
pub use stress::{run_stress, StressReport, StressSpec};
pub use version::{maximal, resolve, VClock, VersionedValue, INITIAL_ORIGIN};

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::ClientId;
use crate::sim::{Sim, Time};

#[derive(Debug, Clone, PartialEq)]
pub struct PutResult {
    pub success: bool,
    pub rounds_used: u8,
    pub acks: usize,
    pub version: VersionedValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GetResult {
    pub resolved: VersionedValue,
    pub all_versions: Vec<VersionedValue>,
    pub rounds_used: u8,
    pub success: bool,
    pub replies: usize,
}

/// Message attributes visible to scripted omission rules.
#[derive(Debug, Clone, PartialEq)]
pub struct MsgInfo {
    pub client: ClientId,
    pub replica: usize,
    pub key: Key,
    pub op: Op,
    pub round: u8,
    pub direction: Direction,
    pub request: u64,
}

type Rule = Box<dyn Fn(&MsgInfo) -> bool>;

#[derive(Default)]
struct Replica {
    data: HashMap<Key, Vec<VersionedValue>>,
}

impl Replica {
    /// Dynamo-style sibling maintenance. Returns whether contents changed.
    fn apply(&mut self, key: &Key, v: &VersionedValue) -> bool {
        let list = self.data.entry(key.clone()).or_default();
        if list.iter().any(|s| s.vclock.descends(&v.vclock)) {
            return false;
        }
        list.retain(|s| !v.vclock.descends(&s.vclock));
        list.push(v.clone());
        true
    }
}

#[derive(Default)]
struct ClientCtx {
    context: HashMap<Key, VClock>,
    last_ts: Time,
}

struct ReqState {
    responded: Vec<bool>,
    count: usize,
    versions: Vec<VersionedValue>,
    waker: Option<Waker>,
}

struct Inner {
    sim: Sim,
    cfg: StoreConfig,
    replicas: RefCell<Vec<Replica>>,
    clients: RefCell<Vec<ClientCtx>>,
    rng: RefCell<ChaCha8Rng>,
    bursts: RefCell<HashMap<(ClientId, usize, Direction), u32>>,
    rules: RefCell<Vec<Rule>>,
    log: RefCell<Option<Vec<LogEvent>>>,
    next_event: Cell<u64>,
    next_request: Cell<u64>,
    committed: RefCell<HashMap<Key, VersionedValue>>,
    stale_reads: Cell<u64>,
    initial: RefCell<Box<dyn Fn(&Key) -> Rc<str>>>,
}

#[derive(Clone)]
pub struct Store(Rc<Inner>);

impl Store {
    pub fn new(sim: &Sim, cfg: StoreConfig, seed: u64) -> Result<Store> {
        cfg.validate()?;
        let replicas = (0..cfg.n_replicas).map(|_| Replica::default()).collect();
        Ok(Store(Rc::new(Inner {
            sim: sim.clone(),
            cfg,
            replicas: RefCell::new(replicas),
            clients: RefCell::new(Vec::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            bursts: RefCell::new(HashMap::new()),
            rules: RefCell::new(Vec::new()),
            log: RefCell::new(None),
            next_event: Cell::new(0),
            next_request: Cell::new(0),
            committed: RefCell::new(HashMap::new()),
            stale_reads: Cell::new(0),
            initial: RefCell::new(Box::new(|_| Rc::from(""))),
        })))
    }

    pub fn config(&self) -> &StoreConfig {
        &self.0.cfg
    }

    pub fn sim(&self) -> &Sim {
        &self.0.sim
    }

    /// Payload returned for keys nobody has written yet.
    pub fn set_initial(&self, f: impl Fn(&Key) -> Rc<str> + 'static) {
        *self.0.initial.borrow_mut() = Box::new(f);
    }

    pub fn initial_value(&self, key: &Key) -> VersionedValue {
        VersionedValue::initial((self.0.initial.borrow())(key))
    }

    pub fn enable_log(&self) {
        let mut log = self.0.log.borrow_mut();
        if log.is_none() {
            *log = Some(Vec::new());
        }
    }

    pub fn log_enabled(&self) -> bool {
        self.0.log.borrow().is_some()
    }

    pub fn log_events(&self) -> Result<Vec<LogEvent>> {
        self.0.log.borrow().clone().ok_or(Error::LogDisabled)
    }

    pub fn with_log<T>(&self, f: impl FnOnce(&[LogEvent]) -> T) -> Result<T> {
        self.0.log.borrow().as_deref().map(f).ok_or(Error::LogDisabled)
    }

    /// Successful GETs whose result was older than the latest PUT committed
    /// before the GET started.
    pub fn stale_read_count(&self) -> Result<u64> {
        if !self.log_enabled() {
            return Err(Error::LogDisabled);
        }
        Ok(self.0.stale_reads.get())
    }

    /// Drops every message for which `rule` returns true, on top of the
    /// random fault model.
    pub fn add_omission_rule(&self, rule: impl Fn(&MsgInfo) -> bool + 'static) {
        self.0.rules.borrow_mut().push(Box::new(rule));
    }

    pub fn clear_omission_rules(&self) {
        self.0.rules.borrow_mut().clear();
    }

    /// Writes `value` straight into every replica with no messages; used to
    /// pre-load states.
    pub fn seed_value(&self, key: &Key, payload: &str, origin: ClientId) -> VersionedValue {
        let v = self.stamp(origin, key, payload.into());
        for r in self.0.replicas.borrow_mut().iter_mut() {
            r.apply(key, &v);
        }
        self.commit(key, &v);
        v
    }

    /// Contents of one replica for `key`.
    pub fn replica_versions(&self, replica: usize, key: &Key) -> Vec<VersionedValue> {
        self.0.replicas.borrow()[replica].data.get(key).cloned().unwrap_or_default()
    }

    /// Union of all replicas' versions for `key`, maximal elements only.
    pub fn omniscient_versions(&self, key: &Key) -> Vec<VersionedValue> {
        let all: Vec<VersionedValue> = self
            .0
            .replicas
            .borrow()
            .iter()
            .flat_map(|r| r.data.get(key).cloned().unwrap_or_default())
            .collect();
        maximal(&all).into_iter().cloned().collect()
    }

    /// What a read of every replica would resolve to.
    pub fn omniscient_value(&self, key: &Key) -> VersionedValue {
        let all = self.omniscient_versions(key);
        resolve(&all).cloned().unwrap_or_else(|_| self.initial_value(key))
    }

    pub async fn put(&self, client: ClientId, key: &Key, payload: impl Into<Rc<str>>) -> PutResult {
        let v = self.stamp(client, key, payload.into());
        let w = self.0.cfg.write_quorum;
        let (success, rounds_used, acks, _) = self.request(client, key, Some(v.clone()), w).await;
        if success {
            self.commit(key, &v);
        }
        PutResult {
            success,
            rounds_used,
            acks,
            version: v,
        }
    }

    pub async fn get(&self, client: ClientId, key: &Key) -> GetResult {
        self.get_with_quorum(client, key, self.0.cfg.read_quorum).await
    }

    pub async fn get_with_quorum(&self, client: ClientId, key: &Key, quorum: usize) -> GetResult {
        let committed = self.0.committed.borrow().get(key).cloned();
        let quorum = quorum.clamp(1, self.0.cfg.n_replicas);
        let (success, rounds_used, replies, versions) = self.request(client, key, None, quorum).await;
        let mut all_versions: Vec<VersionedValue> = maximal(&versions).into_iter().cloned().collect();
        if all_versions.is_empty() {
            all_versions.push(self.initial_value(key));
        }
        let resolved = resolve(&all_versions).expect("non-empty").clone();
        {
            let mut clients = self.0.clients.borrow_mut();
            let ctx = client_ctx(&mut clients, client);
            // The next PUT descends from what this read returned and from
            // the client's own earlier writes, nothing else.
            let own = ctx.context.get(key).map_or(0, |c| c.get(client));
            let mut own_entry = vec![0; client.index() + 1];
            own_entry[client.index()] = own;
            let merged = all_versions
                .iter()
                .fold(VClock::from_entries(own_entry), |acc, v| acc.merge(&v.vclock));
            ctx.context.insert(key.clone(), merged);
        }
        if success {
            if let Some(c) = committed {
                let pair = [resolved.clone(), c.clone()];
                if resolve(&pair).expect("non-empty") == &c && c != resolved {
                    self.0.stale_reads.set(self.0.stale_reads.get() + 1);
                }
            }
        }
        GetResult {
            resolved,
            all_versions,
            rounds_used,
            success,
            replies,
        }
    }

    /// Builds the next version of `key` from `client`'s causal context.
    fn stamp(&self, client: ClientId, key: &Key, payload: Rc<str>) -> VersionedValue {
        let now = self.0.sim.now();
        let mut clients = self.0.clients.borrow_mut();
        let ctx = client_ctx(&mut clients, client);
        let vclock = ctx.context.get(key).cloned().unwrap_or_default().incremented(client);
        ctx.context.insert(key.clone(), vclock.clone());
        let ts = now.max(ctx.last_ts + 1);
        ctx.last_ts = ts;
        VersionedValue::new(payload, vclock, ts, client)
    }

    fn commit(&self, key: &Key, v: &VersionedValue) {
        let mut committed = self.0.committed.borrow_mut();
        let next = match committed.get(key) {
            Some(prev) => resolve(&[prev.clone(), v.clone()]).expect("non-empty").clone(),
            None => v.clone(),
        };
        committed.insert(key.clone(), next);
    }

    async fn request(
        &self,
        client: ClientId,
        key: &Key,
        put: Option<VersionedValue>,
        quorum: usize,
    ) -> (bool, u8, usize, Vec<VersionedValue>) {
        let request = self.0.next_request.get();
        self.0.next_request.set(request + 1);
        let n = self.0.cfg.n_replicas;
        let state = Rc::new(RefCell::new(ReqState {
            responded: vec![false; n],
            count: 0,
            versions: Vec::new(),
            waker: None,
        }));
        for round in 1..=2u8 {
            for replica in 0..n {
                if !state.borrow().responded[replica] {
                    self.send(request, client, replica, key, put.clone(), round, state.clone());
                }
            }
            let deadline = self.0.sim.now() + self.0.cfg.timeout();
            WaitQuorum {
                sim: self.0.sim.clone(),
                state: state.clone(),
                quorum,
                deadline,
                armed: false,
            }
            .await;
            let s = state.borrow();
            if s.count >= quorum {
                return (true, round, s.count, s.versions.clone());
            }
        }
        let s = state.borrow();
        (false, 2, s.count, s.versions.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn send(
        &self,
        request: u64,
        client: ClientId,
        replica: usize,
        key: &Key,
        put: Option<VersionedValue>,
        round: u8,
        state: Rc<RefCell<ReqState>>,
    ) {
        let op = if put.is_some() { Op::Put } else { Op::Get };
        let mut info = MsgInfo {
            client,
            replica,
            key: key.clone(),
            op,
            round,
            direction: Direction::ToReplica,
            request,
        };
        let send_kind = if put.is_some() { LogKind::PutSend } else { LogKind::GetSend };
        self.record(send_kind, &info, put.as_ref(), false);
        if self.omitted(&info) {
            self.record(LogKind::Omit, &info, put.as_ref(), false);
            return;
        }
        let store = self.clone();
        let delay = self.latency();
        self.0.sim.schedule_in(delay, move || {
            let (applied, reply) = {
                let mut replicas = store.0.replicas.borrow_mut();
                let r = &mut replicas[replica];
                match &put {
                    Some(v) => (r.apply(&info.key, v), Vec::new()),
                    None => (false, r.data.get(&info.key).cloned().unwrap_or_default()),
                }
            };
            store.record(LogKind::Deliver, &info, put.as_ref(), applied);
            info.direction = Direction::ToClient;
            if store.omitted(&info) {
                store.record(LogKind::Omit, &info, None, false);
                return;
            }
            let back = store.clone();
            store.0.sim.schedule_in(store.latency(), move || {
                let kind = if put.is_some() { LogKind::PutAck } else { LogKind::GetReply };
                let shown = match &put {
                    Some(v) => Some(v.clone()),
                    None => resolve(&reply).ok().cloned(),
                };
                back.record(kind, &info, shown.as_ref(), false);
                let mut s = state.borrow_mut();
                if s.responded[replica] {
                    return;
                }
                s.responded[replica] = true;
                s.count += 1;
                s.versions.extend(reply);
                if let Some(w) = s.waker.take() {
                    w.wake();
                }
            });
        });
    }

    fn latency(&self) -> Time {
        let l = self.0.cfg.latency;
        if l.jitter_us == 0 {
            l.one_way_us
        } else {
            l.one_way_us + self.0.rng.borrow_mut().gen_range(0..=l.jitter_us)
        }
    }

    fn omitted(&self, info: &MsgInfo) -> bool {
        if self.0.rules.borrow().iter().any(|r| r(info)) {
            return true;
        }
        let faults = self.0.cfg.faults;
        if faults.omission_prob <= 0.0 {
            return false;
        }
        let mut bursts = self.0.bursts.borrow_mut();
        let left = bursts.entry((info.client, info.replica, info.direction)).or_insert(0);
        if *left > 0 {
            *left -= 1;
            return true;
        }
        if self.0.rng.borrow_mut().gen_bool(faults.omission_prob) {
            *left = faults.burst_len - 1;
            return true;
        }
        false
    }

    fn record(&self, kind: LogKind, info: &MsgInfo, v: Option<&VersionedValue>, applied: bool) {
        let mut log = self.0.log.borrow_mut();
        let Some(log) = log.as_mut() else { return };
        let id = self.0.next_event.get();
        self.0.next_event.set(id + 1);
        log.push(LogEvent {
            event_id: id,
            sim_time: self.0.sim.now(),
            kind,
            client: info.client,
            replica: info.replica,
            key: info.key.clone(),
            payload: v.map(|v| v.payload.clone()),
            vclock: v.map(|v| v.vclock.clone()),
            request: info.request,
            op: info.op,
            round: info.round,
            applied,
        });
    }
}

fn client_ctx(clients: &mut Vec<ClientCtx>, client: ClientId) -> &mut ClientCtx {
    if clients.len() <= client.index() {
        clients.resize_with(client.index() + 1, ClientCtx::default);
    }
    &mut clients[client.index()]
}

struct WaitQuorum {
    sim: Sim,
    state: Rc<RefCell<ReqState>>,
    quorum: usize,
    deadline: Time,
    armed: bool,
}

impl Future for WaitQuorum {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        if self.state.borrow().count >= self.quorum || self.sim.now() >= self.deadline {
            return Poll::Ready(());
        }
        self.state.borrow_mut().waker = Some(cx.waker().clone());
        if !self.armed {
            self.armed = true;
            self.sim.wake_at(self.deadline, cx.waker().clone());
        }
        Poll::Pending
    }
}
