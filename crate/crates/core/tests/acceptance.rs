//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=2,6` restricts the run.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use cvfsim::algorithms::{initial_states, max_out_degree, run_serial, validity_oracle, Vars, PCOLOR_MAX_OUT};
use cvfsim::graph::{generate_planar, generate_power_law, partition, partition_stats};
use cvfsim::harness::{
    format_benefit, printed_style, run_once, CompareOptions, ExperimentConfig, GraphSpec, PartitionSpec,
    RunInputs, RunReport,
};
use cvfsim::locks::{overlapping_possessions, run_lock_stress, LockStressSpec};
use cvfsim::monitor::{classify, read_trace_csv};
use cvfsim::sim::{ms, MICROS_PER_SEC};
use cvfsim::store::{run_stress, StressSpec};
use cvfsim::{ExecutionMode, InitialState, NodeState, ProgramKind, Scheme, Sim, Store, StoreConfig, TimeMode};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[derive(Default)]
struct Shared {
    rollback_runs: RefCell<Option<Vec<RunReport>>>,
}

// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct Cell {
    table: String,
    column: String,
    comparison: String,
    baseline_time: f64,
    time: f64,
    printed: String,
}

fn benefit_arithmetic(_: &Shared) -> Outcome {
    let mut rdr = csv::Reader::from_path(data("benefit_cells.csv")).map_err(|e| e.to_string())?;
    let mut total = 0;
    let mut wrong = Vec::new();
    for row in rdr.deserialize() {
        let c: Cell = row.map_err(|e| e.to_string())?;
        let (format, decimals) = printed_style(&c.printed).ok_or_else(|| format!("unparseable cell {}", c.printed))?;
        let opts = CompareOptions {
            format,
            threshold: 2.0,
            decimals,
        };
        let got = format_benefit(c.baseline_time, c.time, &opts);
        total += 1;
        if got != c.printed {
            wrong.push(format!("{}/{}/{}: computed {got}, printed {}", c.table, c.column, c.comparison, c.printed));
        }
    }
    check(
        wrong.is_empty(),
        format!("{}/{total} cells reproduced{}{}", total - wrong.len(), if wrong.is_empty() { "" } else { "; mismatches: " }, wrong.join("; ")),
    )
}

// ---------------------------------------------------------------------------

fn validity_config(program: ProgramKind, mode: ExecutionMode, seed: u64) -> ExperimentConfig {
    let graph = match program {
        ProgramKind::PColor => GraphSpec::Planar { nodes: 200 },
        ProgramKind::MaxMatch => GraphSpec::PowerLaw {
            nodes: 200,
            edges_per_node: 2,
        },
        _ => GraphSpec::Regular { nodes: 200, degree: 6 },
    };
    let mut cfg = ExperimentConfig {
        program,
        graph,
        partition: PartitionSpec {
            scheme: Scheme::Normal,
            clients: 6,
            file: None,
        },
        store: StoreConfig::eventual().latency_ms(5, 1).omission(0.1, 1),
        seed,
        repetitions: 1,
        budget_us: Some(3600 * MICROS_PER_SEC),
        ..Default::default()
    };
    cfg.set_mode(mode);
    cfg
}

fn run_cfg(cfg: &ExperimentConfig) -> RunReport {
    let inputs = cfg.build_inputs().expect("inputs");
    run_once(cfg, &inputs, 0).expect("run")
}

fn rollback_runs(shared: &Shared) -> Vec<RunReport> {
    if let Some(r) = shared.rollback_runs.borrow().as_ref() {
        return r.clone();
    }
    let runs: Vec<RunReport> = [ProgramKind::Color, ProgramKind::PColor, ProgramKind::MaxMatch]
        .into_iter()
        .flat_map(|p| (0..20).map(move |s| run_cfg(&validity_config(p, ExecutionMode::Rollback, 100 + s))))
        .collect();
    *shared.rollback_runs.borrow_mut() = Some(runs.clone());
    runs
}

fn validity_at_convergence(shared: &Shared) -> Outcome {
    let mut bad = Vec::new();
    let mut total = 0;
    let mut rollback = Vec::new();
    for program in [ProgramKind::Color, ProgramKind::PColor, ProgramKind::MaxMatch] {
        for mode in ExecutionMode::ALL {
            for s in 0..20 {
                let cfg = validity_config(program, mode, 100 + s);
                let r = run_cfg(&cfg);
                total += 1;
                let mut ok = r.convergence_time.is_some() && r.validity.valid;
                if program == ProgramKind::PColor {
                    let g = cfg.graph.build(cfg.seed).unwrap();
                    let max_color = r.final_states.iter().filter_map(|s| s.vars.color()).max().unwrap_or(0);
                    ok &= max_color <= 5 && max_out_degree(&g, &r.final_states) <= PCOLOR_MAX_OUT;
                }
                if !ok {
                    bad.push(format!("{} {} seed {}: {:?}", program.label(), mode.label(), cfg.seed, r.validity.reason));
                }
                if mode == ExecutionMode::Rollback {
                    rollback.push(r);
                }
            }
        }
    }
    *shared.rollback_runs.borrow_mut() = Some(rollback);
    check(bad.is_empty(), format!("{}/{total} runs converged valid {}", total - bad.len(), bad.join("; ")))
}

// ---------------------------------------------------------------------------

fn quorum_freshness(_: &Shared) -> Outcome {
    let stress = |cfg: StoreConfig, ops: usize, seed: u64| {
        let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
        let store = Store::new(&sim, cfg, seed).unwrap();
        store.enable_log();
        run_stress(
            &store,
            &StressSpec {
                clients: 8,
                keys: 32,
                total_ops: ops,
                put_ratio: 0.5,
                think_time_us: ms(1),
                seed,
            },
        )
        .expect("stress run");
        store.stale_read_count().unwrap()
    };
    let seq = stress(StoreConfig::sequential().omission(0.2, 1), 100_000, 3);
    let eve = stress(StoreConfig::eventual().omission(0.2, 1), 10_000, 3);
    check(seq == 0 && eve > 0, format!("sequential stale reads {seq}, eventual stale reads {eve}"))
}

// ---------------------------------------------------------------------------

fn mode_ordering(_: &Shared) -> Outcome {
    let mut means = BTreeMap::new();
    for mode in [ExecutionMode::Seq, ExecutionMode::EveS, ExecutionMode::EveAs] {
        let mut cfg = ExperimentConfig {
            program: ProgramKind::MaxMatch,
            graph: GraphSpec::PowerLaw {
                nodes: 1000,
                edges_per_node: 2,
            },
            partition: PartitionSpec {
                scheme: Scheme::Normal,
                clients: 10,
                file: None,
            },
            store: StoreConfig::eventual().latency_ms(5, 1).omission(0.1, 1),
            seed: 11,
            repetitions: 3,
            budget_us: Some(24 * 3600 * MICROS_PER_SEC),
            ..Default::default()
        };
        cfg.set_mode(mode);
        let rep = cvfsim::run_experiment(&cfg).map_err(|e| e.to_string())?;
        if rep.completed().count() != 3 {
            return Err(format!("{} did not converge in every repetition", mode.label()));
        }
        means.insert(mode, rep.convergence_stats().unwrap().0 / MICROS_PER_SEC as f64);
    }
    let (seq, s, a) = (means[&ExecutionMode::Seq], means[&ExecutionMode::EveS], means[&ExecutionMode::EveAs]);
    check(
        a <= seq / 1.5 && s <= 0.9 * seq,
        format!("mean convergence SEQ {seq:.2} s, EVE-S {s:.2} s ({:.1}%), EVE-AS {a:.2} s (×{:.2})", (seq - s) / seq * 100.0, seq / a),
    )
}

// ---------------------------------------------------------------------------

fn partitioning_trend(_: &Shared) -> Outcome {
    let g = generate_power_law(1000, 3, 5).unwrap();
    let normal = partition_stats(&g, &partition(&g, Scheme::Normal, 10, 5, None).unwrap());
    let random = partition_stats(&g, &partition(&g, Scheme::Random, 10, 5, None).unwrap());
    let planar = generate_planar(1000, 5).unwrap();
    let ext = |s: Scheme| -> usize {
        partition_stats(&planar, &partition(&planar, s, 10, 5, None).unwrap())
            .rows
            .iter()
            .map(|r| r.external_edges)
            .sum()
    };
    let (greedy, rnd) = (ext(Scheme::GreedyLocality), ext(Scheme::Random));
    check(
        random.total_degree.stdev < 0.5 * normal.total_degree.stdev && greedy < rnd,
        format!(
            "total-degree stddev random {:.1} vs normal {:.1}; external edges greedy {greedy} vs random {rnd}",
            random.total_degree.stdev, normal.total_degree.stdev
        ),
    )
}

// ---------------------------------------------------------------------------

fn monitor_correctness(shared: &Shared) -> Outcome {
    let runs = rollback_runs(shared);
    let mut problems = Vec::new();
    let mut records = 0;
    for r in &runs {
        let replay = r.replay.expect("rollback runs carry a replay check");
        records += replay.records;
        if !replay.one_to_one() {
            problems.push(format!("{}: {replay:?}", r.run_id));
        }
        let an = r.cvf_analysis.expect("analysis");
        if an.access_nonoverlap + an.access_overlap != an.total || an.output_conflicts > an.access_overlap || an.total != r.cvf_count() {
            problems.push(format!("{}: partition law broken {an:?}", r.run_id));
        }
    }
    let trace = read_trace_csv(File::open(data("cvf_trace_116.csv")).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let an = classify(&trace, ProgramKind::Color).map_err(|e| e.to_string())?;
    let shaped = (an.total, an.access_nonoverlap, an.access_overlap, an.output_conflicts) == (116, 35, 81, 6);
    if !shaped {
        problems.push(format!("stored trace classified as {an:?}"));
    }
    check(
        problems.is_empty(),
        format!("{} rollback runs, {records} records matched 1:1; stored trace {:?} {}", runs.len(), (an.total, an.access_nonoverlap, an.access_overlap, an.output_conflicts), problems.join("; ")),
    )
}

// ---------------------------------------------------------------------------

fn fixpoint_of(cfg: &ExperimentConfig, inputs: &RunInputs, seed: u64) -> Vec<NodeState> {
    let g = &inputs.graph;
    let program = cfg.program_for(g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = initial_states(cfg.program, g, InitialState::Random, &mut rng);
    run_serial(&program, g, &mut states, &mut rng, 10_000).expect("serial run converges");
    states
}

fn termination_detector(_: &Shared) -> Outcome {
    let programs = [ProgramKind::Color, ProgramKind::PColor, ProgramKind::MaxMatch];
    let mut false_positives = Vec::new();
    let mut detector_puts = 0;
    let mut unconverged = 0;
    for i in 0..50u64 {
        let program = programs[(i % 3) as usize];
        let mode = ExecutionMode::ALL[(i % 4) as usize];
        let mut cfg = validity_config(program, mode, 500 + i);
        cfg.graph.set_nodes(100).unwrap();
        cfg.record_log = true;
        let r = run_cfg(&cfg);
        match &r.audit {
            Some(a) => {
                detector_puts += a.detector_puts;
                if !a.sound() {
                    false_positives.push(format!("{} {}: {a:?}", r.run_id, mode.label()));
                }
            }
            None => unconverged += 1,
        }
    }

    // Pre-loaded fixpoint: no client has anything to do.
    let mut cfg = validity_config(ProgramKind::Color, ExecutionMode::EveS, 900);
    cfg.store = StoreConfig::eventual().latency_ms(5, 1);
    let mut inputs = cfg.build_inputs().unwrap();
    inputs.initial = Some(fixpoint_of(&cfg, &inputs, 900));
    let r = run_once(&cfg, &inputs, 0).unwrap();
    let lat = cfg.store.latency;
    let round = 2 * (lat.one_way_us + lat.jitter_us);
    let poll = 10 * lat.one_way_us;
    let at = r.convergence_time.unwrap_or(u64::MAX);
    let prompt = r.convergence.rounds_attempted == 2 && at <= 2 * round + poll;
    check(
        false_positives.is_empty() && detector_puts == 0 && unconverged == 0 && prompt,
        format!(
            "50 audited runs, {} false positives, {unconverged} unconverged, {detector_puts} detector PUTs; pre-loaded fixpoint reported at {:.1} ms after {} rounds (bound {:.1} ms) {}",
            false_positives.len(),
            at as f64 / 1000.0,
            r.convergence.rounds_attempted,
            (2 * round + poll) as f64 / 1000.0,
            false_positives.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------

/// Sets node `v` to the color of its first neighbor.
fn recolor_like_neighbor(states: &mut [NodeState], g: &cvfsim::Graph, v: u32) {
    let u = g.neighbors(v)[0] as usize;
    states[v as usize].vars = match (states[v as usize].vars, states[u].vars) {
        (Vars::Color { .. }, Vars::Color { c }) => Vars::Color { c },
        (Vars::NonstabColor { .. }, Vars::NonstabColor { c }) => Vars::NonstabColor { c },
        other => panic!("unexpected vars {other:?}"),
    };
}

fn stabilization_contrast(_: &Shared) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for program in [ProgramKind::Color, ProgramKind::NonstabColor] {
        let mut cfg = validity_config(ProgramKind::Color, ExecutionMode::EveS, 42);
        cfg.program = program;
        cfg.store = StoreConfig::eventual().latency_ms(5, 1);
        let mut inputs = cfg.build_inputs().unwrap();
        let mut states = fixpoint_of(&cfg, &inputs, 42);
        let g = inputs.graph.clone();
        assert!(validity_oracle(&cfg.program_for(&g), &g, &states).valid);
        recolor_like_neighbor(&mut states, &g, 17);
        inputs.initial = Some(states);
        let r = run_once(&cfg, &inputs, 0).unwrap();
        let converged = r.convergence_time.is_some();
        let expected = if program.is_stabilizing() { r.validity.valid } else { !r.validity.valid };
        ok &= converged && expected;
        details.push(format!(
            "{}: converged {converged}, valid {}",
            program.label(),
            r.validity.valid
        ));
    }
    check(ok, details.join("; "))
}

// ---------------------------------------------------------------------------

fn livelock_and_fix(_: &Shared) -> Outcome {
    let mut timeouts = 0;
    let mut random_converged = 0;
    for s in 0..10u64 {
        for random_color in [false, true] {
            let mut cfg = ExperimentConfig {
                program: ProgramKind::Color,
                graph: GraphSpec::Regular { nodes: 300, degree: 6 },
                partition: PartitionSpec::default(),
                initial: InitialState::Uniform,
                // No jitter: clients that meet on an edge stay in step.
                store: StoreConfig::eventual().latency_ms(5, 0),
                random_color,
                seed: 700 + s,
                repetitions: 1,
                budget_factor: 5.0,
                ..Default::default()
            };
            cfg.set_mode(ExecutionMode::EveAs);
            let rep = cvfsim::run_experiment(&cfg).map_err(|e| e.to_string())?;
            let r = &rep.runs[0];
            if random_color {
                random_converged += usize::from(r.convergence_time.is_some() && r.validity.valid);
            } else {
                timeouts += usize::from(r.timed_out);
            }
        }
    }
    check(
        timeouts >= 1 && random_converged == 10,
        format!("deterministic: {timeouts}/10 timed out; random color: {random_converged}/10 converged"),
    )
}

// ---------------------------------------------------------------------------

fn heuristic_long_tail(_: &Shared) -> Outcome {
    let mut cfg = ExperimentConfig {
        program: ProgramKind::Color,
        graph: GraphSpec::Regular { nodes: 1000, degree: 6 },
        partition: PartitionSpec {
            scheme: Scheme::Normal,
            clients: 10,
            file: None,
        },
        store: StoreConfig::eventual().latency_ms(5, 1),
        seed: 77,
        repetitions: 1,
        budget_us: Some(3600 * MICROS_PER_SEC),
        ..Default::default()
    };
    cfg.set_mode(ExecutionMode::EveAs);
    let base_inputs = cfg.build_inputs().unwrap();
    let g = base_inputs.graph.clone();
    let mut states = fixpoint_of(&cfg, &base_inputs, 77);
    for s in states.iter_mut() {
        s.nd_change = 2;
        s.nbr_change = 0;
        s.delta = 1;
    }
    let perturbed: Vec<u32> = vec![3, 201, 402, 650, 913];
    for &v in &perturbed {
        recolor_like_neighbor(&mut states, &g, v);
        states[v as usize].nd_change = 0;
        for &u in g.neighbors(v) {
            states[u as usize].nbr_change = 5;
        }
    }
    let mut gets = BTreeMap::new();
    let mut valid = true;
    for heuristic in [false, true] {
        let mut c = cfg.clone();
        c.heuristic = heuristic;
        let inputs = RunInputs {
            initial: Some(states.clone()),
            ..base_inputs.clone()
        };
        let r = run_once(&c, &inputs, 0).unwrap();
        valid &= r.convergence_time.is_some() && r.validity.valid;
        gets.insert(heuristic, r.clients.iter().map(|c| c.gets).sum::<u64>());
    }
    let (off, on) = (gets[&false], gets[&true]);
    let drop = (off as f64 - on as f64) / off as f64 * 100.0;
    check(
        drop >= 20.0 && valid,
        format!("data GETs without heuristic {off}, with {on} ({drop:.1}% fewer); final states valid {valid}"),
    )
}

// ---------------------------------------------------------------------------

fn peterson_safety(_: &Shared) -> Outcome {
    let sim = Sim::new(TimeMode::SimulatedDiscreteEvent);
    let store = Store::new(&sim, StoreConfig::sequential().latency_ms(1, 1).omission(0.05, 1), 9).unwrap();
    let rep = run_lock_stress(
        &store,
        LockStressSpec {
            edges: 50,
            acquisitions: 10_000,
            hold_us: 200,
        },
    )
    .map_err(|e| e.to_string())?;
    let keys: HashSet<_> = rep.possessions.iter().map(|p| p.key.clone()).collect();
    let overlaps = overlapping_possessions(&rep.possessions);
    check(
        overlaps.is_empty() && keys.len() == 50,
        format!(
            "{} possessions over {} edges ({} attempts gave up), {} simultaneous holds",
            rep.possessions.len(),
            keys.len(),
            rep.failed,
            overlaps.len()
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (usize, &'static str, fn(&Shared) -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "benefit arithmetic", benefit_arithmetic),
        (2, "validity at convergence", validity_at_convergence),
        (3, "quorum freshness", quorum_freshness),
        (4, "mode ordering trend", mode_ordering),
        (5, "partitioning trend", partitioning_trend),
        (6, "monitor correctness", monitor_correctness),
        (7, "termination detector", termination_detector),
        (8, "stabilization vs non-stabilization", stabilization_contrast),
        (9, "livelock and fix", livelock_and_fix),
        (10, "heuristic long tail", heuristic_long_tail),
        (11, "peterson safety", peterson_safety),
    ];
    let only: Option<HashSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let shared = Shared::default();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&shared))).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n:>2} {tag} {name}: {} [{secs:.1} s]", detail.trim());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
