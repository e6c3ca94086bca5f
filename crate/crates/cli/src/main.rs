use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::value::{Error as DeError, StrDeserializer};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use cvfsim::graph::{partition, partition_stats, write_edge_list, write_partition_file};
use cvfsim::harness::{
    compare, emit, mode_comparison_table, summary_table, BenefitFormat, BenefitSpec, CompareOptions, GraphSpec,
    ModeColumn, OutputFormat, TextTable,
};
use cvfsim::monitor::{annotate, read_trace_csv, write_trace_csv};
use cvfsim::sim::{ms, MICROS_PER_SEC};
use cvfsim::{ExecutionMode, ExperimentConfig, ProgramKind, Scheme};

#[derive(Parser)]
#[command(name = "cvfsim", version, about = "Consistency violating fault experiments on simulated key-value stores")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a graph (and optionally a partitioning) into files.
    Gen(GenArgs),
    /// Run one experiment configuration.
    Run(RunArgs),
    /// Benefit table from a CSV of convergence times.
    Compare(CompareArgs),
    /// Offline cvf analysis of a monitor trace.
    Classify(ClassifyArgs),
}

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(StrDeserializer::<DeError>::new(s)).map_err(|e| e.to_string())
}

fn program_arg(s: &str) -> Result<ProgramKind, String> {
    kebab(s)
}

fn scheme_arg(s: &str) -> Result<Scheme, String> {
    kebab(s)
}

fn mode_arg(s: &str) -> Result<ExecutionMode, String> {
    s.parse().map_err(|e: cvfsim::Error| e.to_string())
}

#[derive(Args)]
struct GenArgs {
    /// regular, power-law or planar.
    #[arg(long, default_value = "regular")]
    generator: String,
    #[arg(long, default_value_t = 300)]
    nodes: usize,
    /// Degree for regular graphs, edges per new node for power-law graphs.
    #[arg(long, default_value_t = 6)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Edge list output.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = scheme_arg)]
    scheme: Option<Scheme>,
    #[arg(long, default_value_t = 6)]
    clients: usize,
    /// Partition file output; requires --scheme.
    #[arg(long)]
    partition_out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = program_arg)]
    program: Option<ProgramKind>,
    /// SEQ, EVE_S, EVE_AS or ROLLBACK. The store quorums follow the mode.
    #[arg(long, value_parser = mode_arg)]
    mode: Option<ExecutionMode>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long, value_parser = scheme_arg)]
    scheme: Option<Scheme>,
    /// One-way store latency.
    #[arg(long)]
    latency_ms: Option<u64>,
    #[arg(long)]
    omission_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    heuristic: bool,
    #[arg(long)]
    random_color: bool,
    /// Simulated-time budget per run, in seconds.
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Keep the omniscient store log (stale-read counts, detector audit).
    #[arg(long)]
    log: bool,
    /// Output directory for CSVs and the summary table.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// CSV with columns `column,mode,time`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "SEQ")]
    baseline: String,
    /// auto, percent or speedup.
    #[arg(long, default_value = "auto")]
    format: String,
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long, default_value_t = 1)]
    decimals: usize,
    /// Optional CSV of the computed cells.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Trace CSV as written by `run`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_parser = program_arg)]
    program: ProgramKind,
    /// Annotated trace output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn gen(a: GenArgs) -> anyhow::Result<()> {
    let spec = match a.generator.as_str() {
        "regular" => GraphSpec::Regular {
            nodes: a.nodes,
            degree: a.degree,
        },
        "power-law" => GraphSpec::PowerLaw {
            nodes: a.nodes,
            edges_per_node: a.degree,
        },
        "planar" => GraphSpec::Planar { nodes: a.nodes },
        other => bail!("unknown generator `{other}`"),
    };
    let g = spec.build(a.seed)?;
    write_edge_list(&g, &a.out)?;
    println!("{} nodes, {} edges -> {}", g.node_count(), g.edge_count(), a.out.display());
    if let Some(scheme) = a.scheme {
        let p = partition(&g, scheme, a.clients, a.seed, None)?;
        print!("{}", partition_stats(&g, &p).to_table(&format!("{scheme:?} partitioning, {} clients", a.clients)));
        if let Some(path) = a.partition_out {
            write_partition_file(&p, &path)?;
        }
    } else if a.partition_out.is_some() {
        bail!("--partition-out needs --scheme");
    }
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<bool> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = a.program {
        cfg.program = p;
    }
    if let Some(m) = a.mode {
        cfg.set_mode(m);
    }
    if let Some(n) = a.nodes {
        cfg.graph.set_nodes(n)?;
    }
    if let Some(k) = a.clients {
        cfg.partition.clients = k;
    }
    if let Some(s) = a.scheme {
        cfg.partition.scheme = s;
    }
    if let Some(l) = a.latency_ms {
        cfg.store.latency.one_way_us = ms(l);
    }
    if let Some(p) = a.omission_prob {
        cfg.store.faults.omission_prob = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    cfg.heuristic |= a.heuristic;
    cfg.random_color |= a.random_color;
    if let Some(b) = a.budget {
        if !(b > 0.0) {
            bail!("--budget must be positive");
        }
        cfg.budget_us = Some((b * MICROS_PER_SEC as f64).round() as u64);
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    cfg.record_log |= a.log;
    cfg.validate()?;
    let report = cvfsim::run_experiment(&cfg)?;
    emit(&report, &a.out, OutputFormat::Csv)?;
    emit(&report, &a.out, OutputFormat::TextTable)?;
    print!("{}", summary_table(&report).render());
    println!("results in {}", a.out.display());
    Ok(report.timeouts() == 0)
}

#[derive(Deserialize)]
struct TimeRow {
    column: String,
    mode: String,
    time: f64,
}

fn compare_cmd(a: CompareArgs) -> anyhow::Result<()> {
    let format = match a.format.as_str() {
        "auto" => BenefitFormat::Auto,
        "percent" => BenefitFormat::Percent,
        "speedup" => BenefitFormat::Speedup,
        other => bail!("unknown format `{other}`"),
    };
    let opts = CompareOptions {
        format,
        threshold: a.threshold,
        decimals: a.decimals,
    };
    let mut rdr = csv::Reader::from_path(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut columns: Vec<ModeColumn> = Vec::new();
    let mut modes: Vec<String> = Vec::new();
    for row in rdr.deserialize() {
        let r: TimeRow = row?;
        if !modes.contains(&r.mode) {
            modes.push(r.mode.clone());
        }
        match columns.iter_mut().find(|c| c.name == r.column) {
            Some(c) => {
                c.times.insert(r.mode, r.time);
            }
            None => columns.push(ModeColumn {
                name: r.column,
                times: BTreeMap::from([(r.mode, r.time)]),
            }),
        }
    }
    let mut out = a.out.as_ref().map(csv::Writer::from_path).transpose()?;
    if let Some(w) = out.as_mut() {
        w.write_record(["column", "comparison", "time", "baseline_time", "percent", "speedup", "display"])?;
    }
    for c in &columns {
        let t = compare(&c.times, &a.baseline, &opts)?;
        if let Some(w) = out.as_mut() {
            for r in &t.rows {
                w.write_record([
                    c.name.clone(),
                    r.label.clone(),
                    r.time.to_string(),
                    t.baseline_time.to_string(),
                    format!("{:.4}", r.percent),
                    format!("{:.4}", r.speedup),
                    r.display.clone(),
                ])?;
            }
        }
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    let benefits: Vec<BenefitSpec> = modes
        .iter()
        .filter(|m| **m != a.baseline)
        .map(|m| BenefitSpec {
            mode: m.clone(),
            baseline: a.baseline.clone(),
            opts,
        })
        .collect();
    let mode_refs: Vec<&str> = modes.iter().map(String::as_str).collect();
    let table: TextTable = mode_comparison_table("Convergence time and benefit", &mode_refs, &columns, &benefits)?;
    print!("{}", table.render());
    Ok(())
}

fn classify_cmd(a: ClassifyArgs) -> anyhow::Result<()> {
    let f = File::open(&a.trace).with_context(|| format!("reading {}", a.trace.display()))?;
    let mut recs = read_trace_csv(f)?;
    let an = annotate(&mut recs, a.program)?;
    let t = TextTable {
        title: format!("cvf analysis ({})", a.program.label()),
        header: vec!["".into(), "count".into()],
        rows: vec![
            vec!["cvfs".into(), an.total.to_string()],
            vec!["no access overlap".into(), an.access_nonoverlap.to_string()],
            vec!["access overlap".into(), an.access_overlap.to_string()],
            vec!["output conflicts".into(), an.output_conflicts.to_string()],
        ],
    };
    print!("{}", t.render());
    if let Some(path) = a.out {
        write_trace_csv(&recs, File::create(&path)?)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(a) => gen(a).map(|_| true),
        Cmd::Run(a) => run(a),
        Cmd::Compare(a) => compare_cmd(a).map(|_| true),
        Cmd::Classify(a) => classify_cmd(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more runs hit the simulated-time budget without converging");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
