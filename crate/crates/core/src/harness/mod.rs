//! Experiment configuration and orchestration: one run wires the store,
//! the clients, the detector and (for ROLLBACK) the monitor onto a fresh
//! simulator and collects what each of them reports.

mod benefit;
mod emit;

pub use benefit::{
    compare, format_benefit, percent, printed_style, round_fixed, speedup, BenefitFormat, BenefitRow, BenefitTable,
    CompareOptions,
};
pub use emit::{
    emit, mode_comparison_table, stabilizing_table, summary_table, throughput_label, BenefitSpec, ModeColumn,
    OutputFormat, TextTable,
};

use std::cell::Cell;
use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use futures::future::join_all;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algorithms::{check_fixpoint, initial_states, validity_oracle, InitialState, NodeState, Program, ProgramKind, Validity};
use crate::detector::{audit, detect, Audit, ConvergenceReport, DetectorConfig};
use crate::engine::{
    install_initial_states, omniscient_states, run_client, throughput_series, ClientConfig, ClientEnv,
    ClientRunReport, ExecutionMode, ThroughputSeries,
};
use crate::error::{Error, Result};
use crate::graph::{
    generate_planar, generate_power_law, generate_random_regular, load_edge_list, partition, ClientId, Graph,
    Partitioning, Scheme,
};
use crate::locks::{overlapping_possessions, SpinPolicy};
use crate::monitor::{annotate, CvfAnalysis, CvfRecord, Monitor};
use crate::sim::{ms, Flag, Sim, Time, MICROS_PER_SEC};
use crate::store::{Store, StoreConfig};

/// Simulated-time ceiling for runs that have no other budget.
pub const HARD_BUDGET: Time = 24 * 3600 * MICROS_PER_SEC;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphSpec {
    Regular { nodes: usize, degree: usize },
    PowerLaw { nodes: usize, edges_per_node: usize },
    Planar { nodes: usize },
    File { path: PathBuf },
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Regular { nodes: 300, degree: 6 }
    }
}

impl GraphSpec {
    pub fn build(&self, seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Regular { nodes, degree } => generate_random_regular(*nodes, *degree, seed),
            GraphSpec::PowerLaw { nodes, edges_per_node } => generate_power_law(*nodes, *edges_per_node, seed),
            GraphSpec::Planar { nodes } => generate_planar(*nodes, seed),
            GraphSpec::File { path } => load_edge_list(path),
        }
    }

    /// Same generator with a different node count. File graphs are left as
    /// they are.
    pub fn set_nodes(&mut self, n: usize) -> Result<()> {
        match self {
            GraphSpec::Regular { nodes, .. } | GraphSpec::PowerLaw { nodes, .. } | GraphSpec::Planar { nodes } => {
                *nodes = n;
                Ok(())
            }
            GraphSpec::File { .. } => Err(Error::InvalidConfig("cannot set the node count of a file graph".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: Scheme,
    pub clients: usize,
    /// Assignment file for `from-file`.
    pub file: Option<PathBuf>,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        PartitionSpec {
            scheme: Scheme::Normal,
            clients: 6,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub program: ProgramKind,
    pub graph: GraphSpec,
    pub partition: PartitionSpec,
    pub mode: ExecutionMode,
    pub store: StoreConfig,
    pub batch_size: usize,
    pub heuristic: bool,
    pub random_color: bool,
    pub epsilon_us: Time,
    pub initial: InitialState,
    pub seed: u64,
    pub repetitions: usize,
    /// Simulated-time budget per run. When absent, `budget_factor` times the
    /// SEQ run of the same configuration.
    pub budget_us: Option<Time>,
    pub budget_factor: f64,
    /// Monitor channel delay; defaults to the store's one-way latency.
    pub monitor_delay_us: Option<Time>,
    pub idle_delay_us: Time,
    pub abort_backoff_us: Time,
    pub spin: SpinPolicy,
    pub throughput_window_us: Time,
    /// Keep the store's omniscient log, needed for stale-read counts and
    /// the detector audit.
    pub record_log: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            program: ProgramKind::Color,
            graph: GraphSpec::default(),
            partition: PartitionSpec::default(),
            mode: ExecutionMode::EveS,
            store: StoreConfig::eventual(),
            batch_size: 8,
            heuristic: false,
            random_color: false,
            epsilon_us: 0,
            initial: InitialState::Random,
            seed: 1,
            repetitions: 3,
            budget_us: None,
            budget_factor: 50.0,
            monitor_delay_us: None,
            idle_delay_us: 0,
            abort_backoff_us: ms(10),
            spin: SpinPolicy::default(),
            throughput_window_us: MICROS_PER_SEC,
            record_log: false,
        }
    }
}

/// Quorums that go with `mode`, keeping everything else in `store`.
pub fn paired_store(mode: ExecutionMode, store: &StoreConfig) -> StoreConfig {
    let n = store.n_replicas.max(1);
    let (r, w) = if mode.sequential_consistency() { (1, n) } else { (1, 1) };
    StoreConfig {
        read_quorum: r,
        write_quorum: w,
        ..store.clone()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Switches mode and the store quorums with it.
    pub fn set_mode(&mut self, mode: ExecutionMode) {
        self.mode = mode;
        self.store = paired_store(mode, &self.store);
    }

    pub fn validate(&self) -> Result<()> {
        self.store.validate()?;
        if self.mode.sequential_consistency() && !self.store.is_sequential() {
            return Err(Error::InvalidConfig(format!(
                "SEQ requires a sequentially consistent store, got N{}R{}W{}",
                self.store.n_replicas, self.store.read_quorum, self.store.write_quorum
            )));
        }
        if !self.mode.sequential_consistency() && !self.store.is_eventual() {
            return Err(Error::InvalidConfig(format!(
                "{} requires an eventually consistent store, got N{}R{}W{}",
                self.mode, self.store.n_replicas, self.store.read_quorum, self.store.write_quorum
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.partition.clients == 0 {
            return Err(Error::InvalidConfig("at least one client is required".into()));
        }
        if self.throughput_window_us == 0 {
            return Err(Error::InvalidConfig("throughput window must be positive".into()));
        }
        if !(self.budget_factor > 0.0) {
            return Err(Error::InvalidConfig("budget factor must be positive".into()));
        }
        if self.partition.scheme == Scheme::FromFile && self.partition.file.is_none() {
            return Err(Error::InvalidConfig("from-file partitioning needs `partition.file`".into()));
        }
        Ok(())
    }

    pub fn program_for(&self, g: &Graph) -> Program {
        Program::new(self.program, g).with_random_color(self.random_color)
    }

    pub fn build_inputs(&self) -> Result<RunInputs> {
        let g = self.graph.build(self.seed)?;
        let p = partition(&g, self.partition.scheme, self.partition.clients, self.seed, self.partition.file.as_deref())?;
        Ok(RunInputs {
            graph: Rc::new(g),
            partitioning: Rc::new(p),
            initial: None,
            budget: None,
        })
    }
}

/// Everything a run needs beyond the configuration.
#[derive(Debug, Clone)]
pub struct RunInputs {
    pub graph: Rc<Graph>,
    pub partitioning: Rc<Partitioning>,
    /// Overrides the configured initial state.
    pub initial: Option<Vec<NodeState>>,
    pub budget: Option<Time>,
}

/// Monitor records checked against the clients' own possession intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayCheck {
    pub overlapping_pairs: usize,
    pub records: usize,
    pub matched: usize,
}

impl ReplayCheck {
    pub fn one_to_one(&self) -> bool {
        self.matched == self.overlapping_pairs && self.matched == self.records
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub run_id: String,
    pub seed: u64,
    pub mode: ExecutionMode,
    pub budget: Time,
    pub timed_out: bool,
    pub convergence_time: Option<Time>,
    pub convergence: ConvergenceReport,
    /// Simulated time when every client had stopped.
    pub end_time: Time,
    pub clients: Vec<ClientRunReport>,
    /// Store operations by workers, lock traffic included.
    pub total_ops: u64,
    pub throughput: Vec<ThroughputSeries>,
    /// Mean over clients of each client's average ops per second.
    pub avg_throughput: f64,
    pub stale_reads: Option<u64>,
    pub cvf_records: Vec<CvfRecord>,
    pub cvf_analysis: Option<CvfAnalysis>,
    pub replay: Option<ReplayCheck>,
    pub audit: Option<Audit>,
    /// Detector snapshot at the verdict, or the omniscient state at the end
    /// of a run that did not converge.
    pub final_states: Vec<NodeState>,
    pub fixpoint: bool,
    pub validity: Validity,
}

impl RunReport {
    pub fn cvf_count(&self) -> usize {
        self.cvf_records.len()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub budget: Time,
    pub runs: Vec<RunReport>,
}

fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl ExperimentReport {
    pub fn completed(&self) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().filter(|r| r.convergence_time.is_some())
    }

    pub fn timeouts(&self) -> usize {
        self.runs.iter().filter(|r| r.timed_out).count()
    }

    /// Mean and population standard deviation of convergence time in
    /// microseconds, over completed runs.
    pub fn convergence_stats(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.completed().filter_map(|r| r.convergence_time).map(|t| t as f64).collect();
        mean_std(&xs)
    }

    pub fn mean_convergence_secs(&self) -> Option<f64> {
        self.convergence_stats().map(|(m, _)| m / MICROS_PER_SEC as f64)
    }

    pub fn total_ops_stats(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.completed().map(|r| r.total_ops as f64).collect();
        mean_std(&xs)
    }

    pub fn throughput_stats(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.completed().map(|r| r.avg_throughput).collect();
        mean_std(&xs)
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn replay_check(clients: &[ClientRunReport], records: &[CvfRecord]) -> ReplayCheck {
    let all: Vec<_> = clients.iter().flat_map(|c| c.possessions.iter().cloned()).collect();
    let pairs = overlapping_possessions(&all);
    let sig = |key: String, x: (ClientId, Time), y: (ClientId, Time)| (key, x.min(y), x.max(y));
    let from_pairs: HashSet<_> = pairs
        .iter()
        .map(|(a, b)| sig(a.key.to_string(), (a.client, a.acquired), (b.client, b.acquired)))
        .collect();
    let from_records: Vec<_> = records
        .iter()
        .map(|r| sig(r.key.to_string(), (r.a.client, r.a.acquire.physical), (r.b.client, r.b.acquire.physical)))
        .collect();
    // Duplicated records only count once, so they show up as a mismatch.
    let distinct: BTreeSet<_> = from_records.iter().collect();
    let matched = distinct.iter().filter(|s| from_pairs.contains(**s)).count();
    ReplayCheck {
        overlapping_pairs: pairs.len(),
        records: records.len(),
        matched,
    }
}

/// Runs repetition `rep` of `cfg` on a fresh simulator.
pub fn run_once(cfg: &ExperimentConfig, inputs: &RunInputs, rep: usize) -> Result<RunReport> {
    cfg.validate()?;
    let g = inputs.graph.clone();
    let p = inputs.partitioning.clone();
    let seed = cfg.seed.wrapping_add(rep as u64);
    let budget = inputs.budget.or(cfg.budget_us).unwrap_or(HARD_BUDGET);
    let program = cfg.program_for(&g);

    let sim = Sim::new(cfg.store.time_mode);
    let store = Store::new(&sim, cfg.store.clone(), mix(seed, 1))?;
    if cfg.record_log {
        store.enable_log();
    }
    let states = match &inputs.initial {
        Some(s) if s.len() == g.node_count() => s.clone(),
        Some(s) => {
            return Err(Error::InvalidConfig(format!(
                "initial state has {} nodes, graph has {}",
                s.len(),
                g.node_count()
            )))
        }
        None => initial_states(cfg.program, &g, cfg.initial, &mut ChaCha8Rng::seed_from_u64(mix(seed, 2))),
    };
    install_initial_states(&store, &states);

    let delay = cfg.monitor_delay_us.unwrap_or(cfg.store.latency.one_way_us).max(1);
    let monitor = cfg.mode.monitors_enabled().then(|| Monitor::new(&sim, delay));
    let stop = Flag::new();
    let timed_out = Rc::new(Cell::new(false));
    {
        let (stop, timed_out, sim2) = (stop.clone(), timed_out.clone(), sim.clone());
        sim.schedule_at(budget, move || {
            if !stop.is_set() {
                timed_out.set(true);
                stop.set(sim2.now());
            }
        });
    }
    let env = ClientEnv {
        program,
        graph: g.clone(),
        partitioning: p.clone(),
        store: store.clone(),
        monitor: monitor.clone(),
        stop: stop.clone(),
    };
    let k = p.client_count();
    let handles: Vec<_> = (0..k as u32)
        .map(|c| {
            let client = ClientId(c);
            let mut cc = ClientConfig::new(client, p.nodes_of(client).to_vec(), mix(seed, 100 + c as u64));
            cc.batch_size = cfg.batch_size;
            cc.heuristic_enabled = cfg.heuristic;
            cc.random_color = cfg.random_color;
            cc.epsilon = cfg.epsilon_us;
            cc.idle_delay_us = cfg.idle_delay_us;
            cc.abort_backoff_us = cfg.abort_backoff_us;
            cc.spin = cfg.spin;
            sim.spawn(run_client(cc, cfg.mode, env.clone()))
        })
        .collect();
    let det_cfg = DetectorConfig::for_store(&store, ClientId(k as u32));
    let detector = sim.spawn(detect(store.clone(), g.clone(), p.clone(), program, det_cfg, stop.clone()));
    let sim2 = sim.clone();
    let outcome = sim.run(
        async move {
            let conv = detector.await;
            let clients = join_all(handles).await;
            let end = sim2.now();
            // Let in-flight monitor traffic land.
            sim2.sleep(2 * delay + 1).await;
            (conv, clients, end)
        },
        None,
    );
    let Some((mut convergence, clients, end_time)) = outcome.completed() else {
        return Err(Error::InvalidConfig("simulation stalled".into()));
    };
    let clients = clients.into_iter().collect::<Result<Vec<_>>>()?;
    let run_id = format!("{}-{}-{}", cfg.program.label(), cfg.mode.code(), seed);
    convergence.run_id = run_id.clone();

    let throughput: Vec<ThroughputSeries> =
        clients.iter().map(|c| throughput_series(&c.ops, cfg.throughput_window_us)).collect();
    let avg_throughput = if throughput.is_empty() {
        0.0
    } else {
        throughput.iter().map(|t| t.average).sum::<f64>() / throughput.len() as f64
    };
    let total_ops = clients
        .iter()
        .map(|c| c.ops.iter().filter(|o| o.kind.is_store_op()).count() as u64)
        .sum();

    let (cvf_records, cvf_analysis, replay) = match &monitor {
        Some(m) => {
            let mut recs: Vec<CvfRecord> = m.records().into_iter().filter(|r| r.a.release.is_some() && r.b.release.is_some()).collect();
            let an = annotate(&mut recs, cfg.program)?;
            let rc = replay_check(&clients, &recs);
            (recs, Some(an), Some(rc))
        }
        None => (Vec::new(), None, None),
    };
    let stale_reads = if cfg.record_log { Some(store.stale_read_count()?) } else { None };
    let audit = if cfg.record_log && convergence.converged_at.is_some() {
        Some(audit(&store, &g, &program, &convergence, det_cfg.client)?)
    } else {
        None
    };
    let final_states = match &convergence.states {
        Some(s) => s.clone(),
        None => omniscient_states(&store, cfg.program, &g, &p)?,
    };
    let fixpoint = check_fixpoint(&program, &g, &final_states).is_fixpoint;
    let validity = validity_oracle(&program, &g, &final_states);
    Ok(RunReport {
        run_id,
        seed,
        mode: cfg.mode,
        budget,
        timed_out: timed_out.get() && convergence.converged_at.is_none(),
        convergence_time: convergence.converged_at,
        convergence,
        end_time,
        clients,
        total_ops,
        throughput,
        avg_throughput,
        stale_reads,
        cvf_records,
        cvf_analysis,
        replay,
        audit,
        final_states,
        fixpoint,
        validity,
    })
}

/// Budget for non-SEQ runs without an explicit one: a multiple of the SEQ
/// run of the same configuration.
pub fn default_budget(cfg: &ExperimentConfig, inputs: &RunInputs) -> Result<Time> {
    if let Some(b) = cfg.budget_us {
        return Ok(b);
    }
    if cfg.mode.sequential_consistency() {
        return Ok(HARD_BUDGET);
    }
    let mut seq = cfg.clone();
    seq.set_mode(ExecutionMode::Seq);
    seq.record_log = false;
    let probe = run_once(&seq, &RunInputs { budget: Some(HARD_BUDGET), ..inputs.clone() }, 0)?;
    let base = probe.convergence_time.unwrap_or(probe.end_time).max(1);
    Ok(((base as f64) * cfg.budget_factor).ceil() as Time)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut inputs = cfg.build_inputs()?;
    let budget = default_budget(cfg, &inputs)?;
    inputs.budget = Some(budget);
    let runs = (0..cfg.repetitions).map(|rep| run_once(cfg, &inputs, rep)).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: cfg.clone(),
        budget,
        runs,
    })
}
