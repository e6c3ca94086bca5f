//! Single-threaded discrete-event executor.
//!
//! Every actor in a run (clients, replicas, monitor, detector) is either an
//! async task or a scheduled callback on one shared timeline. Events at the
//! same instant fire in scheduling order, so a run is a pure function of its
//! inputs and seeds.

use std::cell::{Cell, RefCell};
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll, Wake, Waker};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Simulated time in microseconds since run start.
pub type Time = u64;

pub const MICROS_PER_MS: Time = 1_000;
pub const MICROS_PER_SEC: Time = 1_000_000;

pub const DEFAULT_CLASS: u8 = 128;

pub fn ms(v: u64) -> Time {
    v * MICROS_PER_MS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimeMode {
    /// Time jumps straight to the next event.
    #[default]
    SimulatedDiscreteEvent,
    /// Same event order, but the executor sleeps so that simulated time
    /// tracks wall-clock time.
    RealSleep,
}

type LocalFuture = Pin<Box<dyn Future<Output = ()>>>;

struct Scheduled {
    at: Time,
    class: u8,
    seq: u64,
    action: Box<dyn FnOnce()>,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.class, self.seq) == (other.at, other.class, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.class, self.seq).cmp(&(other.at, other.class, other.seq))
    }
}

struct TaskWaker {
    id: usize,
    queued: AtomicBool,
    ready: Arc<Mutex<VecDeque<usize>>>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }
    fn wake_by_ref(self: &Arc<Self>) {
        if !self.queued.swap(true, AtomicOrdering::AcqRel) {
            self.ready.lock().expect("ready queue poisoned").push_back(self.id);
        }
    }
}

struct Task {
    future: Option<LocalFuture>,
    waker: Arc<TaskWaker>,
}

struct Inner {
    now: Cell<Time>,
    seq: Cell<u64>,
    events: RefCell<BinaryHeap<Reverse<Scheduled>>>,
    ready: Arc<Mutex<VecDeque<usize>>>,
    tasks: RefCell<Vec<Task>>,
    free: RefCell<Vec<usize>>,
    live: Cell<usize>,
    mode: TimeMode,
    events_fired: Cell<u64>,
}

/// Cheap-to-clone handle on the executor.
#[derive(Clone)]
pub struct Sim(Rc<Inner>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome<T> {
    Completed(T),
    /// The next event lies beyond the budget; the clock is left at the budget.
    BudgetExceeded,
    /// Nothing is runnable and no event is pending.
    Stalled,
}

impl<T> RunOutcome<T> {
    pub fn completed(self) -> Option<T> {
        match self {
            RunOutcome::Completed(v) => Some(v),
            _ => None,
        }
    }
}

impl Sim {
    pub fn new(mode: TimeMode) -> Self {
        Sim(Rc::new(Inner {
            now: Cell::new(0),
            seq: Cell::new(0),
            events: RefCell::new(BinaryHeap::new()),
            ready: Arc::new(Mutex::new(VecDeque::new())),
            tasks: RefCell::new(Vec::new()),
            free: RefCell::new(Vec::new()),
            live: Cell::new(0),
            mode,
            events_fired: Cell::new(0),
        }))
    }

    pub fn now(&self) -> Time {
        self.0.now.get()
    }

    pub fn mode(&self) -> TimeMode {
        self.0.mode
    }

    pub fn events_fired(&self) -> u64 {
        self.0.events_fired.get()
    }

    /// Runs `action` at absolute time `at` (clamped to now).
    pub fn schedule_at(&self, at: Time, action: impl FnOnce() + 'static) {
        self.schedule_class(at, DEFAULT_CLASS, action);
    }

    /// Like [`Sim::schedule_at`]; among events due at the same instant, lower
    /// classes fire first.
    pub fn schedule_class(&self, at: Time, class: u8, action: impl FnOnce() + 'static) {
        let seq = self.0.seq.get();
        self.0.seq.set(seq + 1);
        self.0.events.borrow_mut().push(Reverse(Scheduled {
            at: at.max(self.now()),
            class,
            seq,
            action: Box::new(action),
        }));
    }

    pub fn schedule_in(&self, delay: Time, action: impl FnOnce() + 'static) {
        self.schedule_at(self.now() + delay, action);
    }

    pub fn sleep(&self, delay: Time) -> Sleep {
        self.sleep_until(self.now() + delay)
    }

    pub fn sleep_until(&self, until: Time) -> Sleep {
        Sleep {
            sim: self.clone(),
            until,
            slot: None,
        }
    }

    /// Wakes `waker` at `at`; used by futures that wait on a condition with
    /// a deadline.
    pub fn wake_at(&self, at: Time, waker: Waker) {
        self.schedule_at(at, move || waker.wake());
    }

    pub fn spawn<T: 'static>(&self, fut: impl Future<Output = T> + 'static) -> JoinHandle<T> {
        let state = Rc::new(RefCell::new(JoinState { value: None, waker: None }));
        let out = state.clone();
        let wrapped = async move {
            let v = fut.await;
            let mut s = out.borrow_mut();
            s.value = Some(v);
            if let Some(w) = s.waker.take() {
                w.wake();
            }
        };
        self.spawn_task(Box::pin(wrapped));
        JoinHandle { state }
    }

    fn spawn_task(&self, future: LocalFuture) {
        let inner = &self.0;
        let id = inner.free.borrow_mut().pop();
        let mut tasks = inner.tasks.borrow_mut();
        let id = id.unwrap_or_else(|| {
            let id = tasks.len();
            tasks.push(Task {
                future: None,
                waker: Arc::new(TaskWaker {
                    id,
                    queued: AtomicBool::new(false),
                    ready: inner.ready.clone(),
                }),
            });
            tasks.len() - 1
        });
        tasks[id].future = Some(future);
        inner.live.set(inner.live.get() + 1);
        Waker::from(tasks[id].waker.clone()).wake();
    }

    /// Drives the executor until `fut` completes. Other spawned tasks keep
    /// running alongside; whatever is still pending when `fut` finishes is
    /// left unpolled.
    pub fn run<T: 'static>(&self, fut: impl Future<Output = T> + 'static, budget: Option<Time>) -> RunOutcome<T> {
        let handle = self.spawn(fut);
        let wall_start = Instant::now();
        let sim_start = self.now();
        loop {
            self.drain_ready();
            if let Some(v) = handle.state.borrow_mut().value.take() {
                return RunOutcome::Completed(v);
            }
            let next = self.0.events.borrow_mut().pop();
            let Some(Reverse(ev)) = next else {
                return RunOutcome::Stalled;
            };
            if budget.is_some_and(|b| ev.at > b) {
                self.0.now.set(budget.unwrap().max(self.now()));
                self.0.events.borrow_mut().push(Reverse(ev));
                return RunOutcome::BudgetExceeded;
            }
            if self.0.mode == TimeMode::RealSleep && ev.at > self.now() {
                let target = wall_start + Duration::from_micros(ev.at - sim_start);
                let now = Instant::now();
                if target > now {
                    std::thread::sleep(target - now);
                }
            }
            self.0.now.set(ev.at);
            self.0.events_fired.set(self.0.events_fired.get() + 1);
            (ev.action)();
            // Everything due at this instant lands before tasks observe it.
            loop {
                let due = {
                    let mut events = self.0.events.borrow_mut();
                    match events.peek() {
                        Some(Reverse(e)) if e.at <= self.now() => events.pop(),
                        _ => None,
                    }
                };
                let Some(Reverse(ev)) = due else { break };
                self.0.events_fired.set(self.0.events_fired.get() + 1);
                (ev.action)();
            }
        }
    }

    /// Runs `fut` to completion, panicking on a stall.
    pub fn block_on<T: 'static>(&self, fut: impl Future<Output = T> + 'static) -> T {
        match self.run(fut, None) {
            RunOutcome::Completed(v) => v,
            _ => panic!("simulation stalled before the future completed"),
        }
    }

    fn drain_ready(&self) {
        loop {
            let next = self.0.ready.lock().expect("ready queue poisoned").pop_front();
            let Some(id) = next else { break };
            let (fut, waker) = {
                let mut tasks = self.0.tasks.borrow_mut();
                let task = &mut tasks[id];
                task.waker.queued.store(false, AtomicOrdering::Release);
                (task.future.take(), task.waker.clone())
            };
            let Some(mut fut) = fut else { continue };
            let waker = Waker::from(waker);
            let mut cx = Context::from_waker(&waker);
            match fut.as_mut().poll(&mut cx) {
                Poll::Ready(()) => {
                    self.0.live.set(self.0.live.get() - 1);
                    self.0.free.borrow_mut().push(id);
                }
                Poll::Pending => self.0.tasks.borrow_mut()[id].future = Some(fut),
            }
        }
    }

    pub fn live_tasks(&self) -> usize {
        self.0.live.get()
    }
}

struct JoinState<T> {
    value: Option<T>,
    waker: Option<Waker>,
}

pub struct JoinHandle<T> {
    state: Rc<RefCell<JoinState<T>>>,
}

impl<T> Future for JoinHandle<T> {
    type Output = T;
    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<T> {
        let mut s = self.state.borrow_mut();
        match s.value.take() {
            Some(v) => Poll::Ready(v),
            None => {
                s.waker = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

pub struct Sleep {
    sim: Sim,
    until: Time,
    slot: Option<Rc<RefCell<Option<Waker>>>>,
}

impl Future for Sleep {
    type Output = ();
    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        if self.sim.now() >= self.until {
            return Poll::Ready(());
        }
        match &self.slot {
            Some(slot) => *slot.borrow_mut() = Some(cx.waker().clone()),
            None => {
                let slot = Rc::new(RefCell::new(Some(cx.waker().clone())));
                let fire = slot.clone();
                self.sim.schedule_at(self.until, move || {
                    if let Some(w) = fire.borrow_mut().take() {
                        w.wake();
                    }
                });
                self.slot = Some(slot);
            }
        }
        Poll::Pending
    }
}

impl Drop for Sleep {
    fn drop(&mut self) {
        if let Some(slot) = &self.slot {
            slot.borrow_mut().take();
        }
    }
}

/// A set-once broadcast flag that tasks can poll or await.
#[derive(Clone, Default)]
pub struct Flag(Rc<FlagInner>);

#[derive(Default)]
struct FlagInner {
    set: Cell<bool>,
    at: Cell<Option<Time>>,
    waiters: RefCell<Vec<Waker>>,
}

impl Flag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, now: Time) {
        if !self.0.set.replace(true) {
            self.0.at.set(Some(now));
            for w in self.0.waiters.borrow_mut().drain(..) {
                w.wake();
            }
        }
    }

    pub fn is_set(&self) -> bool {
        self.0.set.get()
    }

    pub fn set_at(&self) -> Option<Time> {
        self.0.at.get()
    }

    pub fn wait(&self) -> FlagWait {
        FlagWait(self.clone())
    }
}

pub struct FlagWait(Flag);

impl Future for FlagWait {
    type Output = ();
    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        if self.0.is_set() {
            Poll::Ready(())
        } else {
            self.0 .0.waiters.borrow_mut().push(cx.waker().clone());
            Poll::Pending
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sleeps_advance_virtual_time_in_order() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let log = Rc::new(RefCell::new(Vec::new()));
        for (name, d) in [("b", 20), ("a", 10), ("c", 30)] {
            let (s, l) = (sim.clone(), log.clone());
            sim.spawn(async move {
                s.sleep(d).await;
                l.borrow_mut().push((name, s.now()));
            });
        }
        let s = sim.clone();
        sim.block_on(async move { s.sleep(100).await });
        assert_eq!(*log.borrow(), vec![("a", 10), ("b", 20), ("c", 30)]);
        assert_eq!(sim.now(), 100);
    }

    #[test]
    fn join_handle_returns_value() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let s = sim.clone();
        let v = sim.block_on(async move {
            let s2 = s.clone();
            let h = s.spawn(async move {
                s2.sleep(5).await;
                7
            });
            h.await * 2
        });
        assert_eq!(v, 14);
        assert_eq!(sim.now(), 5);
    }

    #[test]
    fn lower_class_fires_first_at_same_instant() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let log = Rc::new(RefCell::new(Vec::new()));
        let (a, b) = (log.clone(), log.clone());
        sim.schedule_at(10, move || a.borrow_mut().push("default"));
        sim.schedule_class(10, 0, move || b.borrow_mut().push("early"));
        let s = sim.clone();
        sim.block_on(async move { s.sleep(20).await });
        assert_eq!(*log.borrow(), vec!["early", "default"]);
    }

    #[test]
    fn budget_stops_run() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let s = sim.clone();
        let out = sim.run(async move { s.sleep(1_000).await }, Some(500));
        assert_eq!(out, RunOutcome::BudgetExceeded);
        assert_eq!(sim.now(), 500);
    }

    #[test]
    fn stall_is_reported() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let flag = Flag::new();
        let f = flag.clone();
        assert_eq!(sim.run(async move { f.wait().await }, None), RunOutcome::Stalled);
    }

    #[test]
    fn flag_wakes_waiters() {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let flag = Flag::new();
        let (s, f) = (sim.clone(), flag.clone());
        sim.spawn(async move {
            s.sleep(42).await;
            f.set(s.now());
        });
        let f = flag.clone();
        sim.block_on(async move { f.wait().await });
        assert_eq!(flag.set_at(), Some(42));
    }

    #[test]
    fn real_sleep_paces_wall_clock() {
        let sim = Sim::new(TimeMode::RealSleep);
        let s = sim.clone();
        let start = Instant::now();
        sim.block_on(async move { s.sleep(ms(20)).await });
        assert!(start.elapsed() >= Duration::from_millis(20));
    }
}
