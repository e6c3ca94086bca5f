use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::benefit::{format_benefit, CompareOptions};
use super::{ExperimentReport, RunReport};
use crate::detector::write_convergence_csv;
use crate::engine::ExecutionMode;
use crate::error::{Error, Result};
use crate::monitor::write_trace_csv;
use crate::sim::{Time, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    TextTable,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "text-table" | "text" => Ok(OutputFormat::TextTable),
            _ => Err(Error::InvalidConfig(format!("unknown output format `{s}`"))),
        }
    }
}

/// Plain aligned table: first column left, the rest right.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TextTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn render(&self) -> String {
        let cols = self.rows.iter().map(Vec::len).chain([self.header.len()]).max().unwrap_or(0);
        let mut width = vec![0; cols];
        for row in self.rows.iter().chain([&self.header]) {
            for (i, c) in row.iter().enumerate() {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |row: &[String]| {
            let mut s = String::new();
            for (i, w) in width.iter().enumerate() {
                let c = row.get(i).map_or("", String::as_str);
                let pad = w - c.chars().count();
                if i == 0 {
                    s.push_str(c);
                    s.push_str(&" ".repeat(pad));
                } else {
                    s.push_str("  ");
                    s.push_str(&" ".repeat(pad));
                    s.push_str(c);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.header));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

fn fmt_time(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.1}")
    }
}

/// One column of a comparison table: mean convergence time per mode label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModeColumn {
    pub name: String,
    pub times: BTreeMap<String, f64>,
}

impl ModeColumn {
    pub fn new(name: impl Into<String>, times: &[(&str, f64)]) -> Self {
        ModeColumn {
            name: name.into(),
            times: times.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        }
    }
}

/// A benefit row: `mode` against `baseline`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenefitSpec {
    pub mode: String,
    pub baseline: String,
    pub opts: CompareOptions,
}

impl BenefitSpec {
    pub fn new(mode: &str, baseline: &str) -> Self {
        BenefitSpec {
            mode: mode.to_string(),
            baseline: baseline.to_string(),
            opts: CompareOptions::default(),
        }
    }
}

fn benefit_cell(col: &ModeColumn, b: &BenefitSpec) -> Result<String> {
    let base = *col.times.get(&b.baseline).ok_or_else(|| Error::MissingBaseline(b.baseline.clone()))?;
    Ok(match col.times.get(&b.mode) {
        Some(&t) => format_benefit(base, t, &b.opts),
        None => "-".into(),
    })
}

/// Time rows for `modes` followed by one row per benefit, one column per
/// input (graph, partitioning or latency).
pub fn mode_comparison_table(title: &str, modes: &[&str], columns: &[ModeColumn], benefits: &[BenefitSpec]) -> Result<TextTable> {
    let mut t = TextTable {
        title: title.to_string(),
        header: std::iter::once(String::new()).chain(columns.iter().map(|c| c.name.clone())).collect(),
        rows: Vec::new(),
    };
    for m in modes {
        let mut row = vec![m.to_string()];
        row.extend(columns.iter().map(|c| c.times.get(*m).map_or("-".into(), |&x| fmt_time(x))));
        t.rows.push(row);
    }
    for b in benefits {
        let mut row = vec![format!("{} vs. {}", b.mode, b.baseline)];
        for c in columns {
            row.push(benefit_cell(c, b)?);
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Stabilizing {SEQ, Rollback, EVE-AS} against non-stabilizing {SEQ,
/// Rollback}, each with its benefit over SEQ. Columns pair up by position.
pub fn stabilizing_table(title: &str, stabilizing: &[ModeColumn], nonstabilizing: &[ModeColumn], opts: CompareOptions) -> Result<TextTable> {
    let mut t = TextTable {
        title: title.to_string(),
        header: std::iter::once(String::new()).chain(stabilizing.iter().map(|c| c.name.clone())).collect(),
        rows: Vec::new(),
    };
    let seq = ExecutionMode::Seq.label();
    let rb = ExecutionMode::Rollback.label();
    let eve_as = ExecutionMode::EveAs.label();
    let times = |prefix: &str, mode: &str, cols: &[ModeColumn]| {
        let mut row = vec![format!("{prefix} {mode}")];
        row.extend(cols.iter().map(|c| c.times.get(mode).map_or("-".into(), |&x| fmt_time(x))));
        row
    };
    let benefit = |label: &str, mode: &str, cols: &[ModeColumn]| -> Result<Vec<String>> {
        let spec = BenefitSpec {
            mode: mode.into(),
            baseline: seq.into(),
            opts,
        };
        let mut row = vec![label.to_string()];
        for c in cols {
            row.push(benefit_cell(c, &spec)?);
        }
        Ok(row)
    };
    for m in [seq, rb, eve_as] {
        t.rows.push(times("Stabilizing", m, stabilizing));
    }
    t.rows.push(benefit("EVE-AS benefit", eve_as, stabilizing)?);
    for m in [seq, rb] {
        t.rows.push(times("Non-stabilizing", m, nonstabilizing));
    }
    t.rows.push(benefit("Rollback benefit", rb, nonstabilizing)?);
    Ok(t)
}

/// Legend label for a throughput curve, e.g. `EVE-S (4996 ops)`.
pub fn throughput_label(mode: ExecutionMode, avg_ops: f64) -> String {
    format!("{} ({} ops)", mode.label(), avg_ops.round() as i64)
}

fn secs(t: Time) -> String {
    format!("{:.3}", t as f64 / MICROS_PER_SEC as f64)
}

/// One row per repetition plus mean and stddev.
pub fn summary_table(report: &ExperimentReport) -> TextTable {
    let cfg = &report.config;
    let mut t = TextTable {
        title: format!(
            "{} {} on {} nodes, {} clients ({:?} partitioning), budget {} s",
            cfg.program.label(),
            cfg.mode.label(),
            report.runs.first().map_or(0, |r| r.final_states.len()),
            cfg.partition.clients,
            cfg.partition.scheme,
            secs(report.budget)
        ),
        header: ["run", "converged (s)", "rounds", "ops", "ops/s", "cvfs", "valid", "timeout"]
            .map(String::from)
            .to_vec(),
        rows: Vec::new(),
    };
    for r in &report.runs {
        t.rows.push(vec![
            r.run_id.clone(),
            r.convergence_time.map_or("-".into(), secs),
            r.convergence.rounds_attempted.to_string(),
            r.total_ops.to_string(),
            format!("{:.1}", r.avg_throughput),
            r.cvf_count().to_string(),
            r.validity.valid.to_string(),
            r.timed_out.to_string(),
        ]);
    }
    let s = |x: Option<(f64, f64)>, scale: f64, prec: usize| {
        x.map_or(("-".to_string(), "-".to_string()), |(m, d)| (format!("{:.prec$}", m / scale), format!("{:.prec$}", d / scale)))
    };
    let (cm, cd) = s(report.convergence_stats(), MICROS_PER_SEC as f64, 3);
    let (om, od) = s(report.total_ops_stats(), 1.0, 1);
    let (tm, td) = s(report.throughput_stats(), 1.0, 1);
    t.rows.push(vec!["mean".into(), cm, String::new(), om, tm]);
    t.rows.push(vec!["stddev".into(), cd, String::new(), od, td]);
    t
}

#[derive(Serialize)]
struct ClientRow<'a> {
    run_id: &'a str,
    client: u32,
    sweeps: u64,
    actions_executed: u64,
    gets: u64,
    puts: u64,
    lock_acquires: u64,
    skips: u64,
    cvf_notifications: u64,
    aborts: u64,
}

const CLIENT_HEADER: [&str; 10] = [
    "run_id",
    "client",
    "sweeps",
    "actions_executed",
    "gets",
    "puts",
    "lock_acquires",
    "skips",
    "cvf_notifications",
    "aborts",
];

fn client_rows(runs: &[RunReport], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CLIENT_HEADER)?;
    for r in runs {
        for c in &r.clients {
            w.serialize(ClientRow {
                run_id: &r.run_id,
                client: c.client,
                sweeps: c.sweeps,
                actions_executed: c.actions_executed,
                gets: c.gets,
                puts: c.puts,
                lock_acquires: c.lock_acquires,
                skips: c.skips,
                cvf_notifications: c.cvf_notifications,
                aborts: c.aborts,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn throughput_rows(runs: &[RunReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "client", "window_start_us", "ops_per_sec"])?;
    for r in runs {
        for (c, series) in r.clients.iter().zip(&r.throughput) {
            for (start, rate) in &series.windows {
                w.write_record([r.run_id.clone(), c.client.to_string(), start.to_string(), format!("{rate:.3}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

/// Writes the report under `dir` and returns the files written.
pub fn emit(report: &ExperimentReport, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    match format {
        OutputFormat::Csv => {
            client_rows(&report.runs, create(dir, "clients.csv", &mut written)?)?;
            throughput_rows(&report.runs, create(dir, "throughput.csv", &mut written)?)?;
            let recs: Vec<_> = report.runs.iter().flat_map(|r| r.cvf_records.iter().cloned()).collect();
            write_trace_csv(&recs, create(dir, "cvf_trace.csv", &mut written)?)?;
            let conv: Vec<_> = report.runs.iter().map(|r| r.convergence.clone()).collect();
            write_convergence_csv(&conv, create(dir, "convergence.csv", &mut written)?)?;
        }
        OutputFormat::TextTable => {
            let mut text = summary_table(report).render();
            if let Some((m, _)) = report.throughput_stats() {
                let _ = writeln!(text, "\n{}", throughput_label(report.config.mode, m));
            }
            for r in &report.runs {
                if let Some(a) = r.cvf_analysis {
                    let _ = writeln!(
                        text,
                        "{}: {} cvfs, {} without access overlap, {} with, {} output conflicts",
                        r.run_id, a.total, a.access_nonoverlap, a.access_overlap, a.output_conflicts
                    );
                }
            }
            let mut f = create(dir, "summary.txt", &mut written)?;
            f.write_all(text.as_bytes())?;
            f.flush()?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stabilizing_shape() {
        let stab = [
            ModeColumn::new("d=2", &[("SEQ", 2325.0), ("Rollback", 1559.0), ("EVE-AS", 1321.0)]),
            ModeColumn::new("d=10", &[("SEQ", 11146.0), ("Rollback", 10150.0), ("EVE-AS", 1717.0)]),
        ];
        let non = [
            ModeColumn::new("d=2", &[("SEQ", 1653.0), ("Rollback", 1213.0)]),
            ModeColumn::new("d=10", &[("SEQ", 7021.0), ("Rollback", 5456.0)]),
        ];
        let opts = CompareOptions {
            threshold: 1.5,
            ..Default::default()
        };
        let t = stabilizing_table("Stabilizing and non-stabilizing", &stab, &non, opts).unwrap();
        let labels: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
        assert_eq!(
            labels,
            [
                "Stabilizing SEQ",
                "Stabilizing Rollback",
                "Stabilizing EVE-AS",
                "EVE-AS benefit",
                "Non-stabilizing SEQ",
                "Non-stabilizing Rollback",
                "Rollback benefit"
            ]
        );
        assert_eq!(t.rows[3][1..], ["×1.8", "×6.5"]);
        assert_eq!(t.rows[6][1..], ["26.6%", "22.3%"]);
        let text = t.render();
        assert!(text.lines().nth(1).unwrap().ends_with("d=10"));
    }

    #[test]
    fn mode_shape_and_missing_baseline() {
        let cols = [ModeColumn::new("planar", &[("SEQ", 8545.0), ("EVE-S", 6173.0), ("EVE-AS", 2590.0)])];
        let t = mode_comparison_table(
            "modes",
            &["SEQ", "EVE-S", "EVE-AS", "Rollback"],
            &cols,
            &[BenefitSpec::new("EVE-S", "SEQ"), BenefitSpec::new("EVE-AS", "SEQ"), BenefitSpec::new("Rollback", "SEQ")],
        )
        .unwrap();
        assert_eq!(t.rows[3], ["Rollback", "-"]);
        assert_eq!(t.rows[4], ["EVE-S vs. SEQ", "27.8%"]);
        assert_eq!(t.rows[5], ["EVE-AS vs. SEQ", "×3.3"]);
        let cols = [ModeColumn::new("x", &[("EVE-S", 1.0)])];
        assert!(matches!(
            mode_comparison_table("", &[], &cols, &[BenefitSpec::new("EVE-S", "SEQ")]),
            Err(Error::MissingBaseline(_))
        ));
    }

    #[test]
    fn labels() {
        assert_eq!(throughput_label(ExecutionMode::EveS, 4995.6), "EVE-S (4996 ops)");
        assert_eq!(throughput_label(ExecutionMode::Rollback, 12.0), "Rollback (12 ops)");
    }

    #[test]
    fn format_names() {
        assert_eq!("csv".parse::<OutputFormat>().unwrap(), OutputFormat::Csv);
        assert_eq!("text-table".parse::<OutputFormat>().unwrap(), OutputFormat::TextTable);
        assert!("xml".parse::<OutputFormat>().is_err());
    }
}
