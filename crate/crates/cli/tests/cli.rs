use std::path::Path;
use std::process::{Command, Output};

fn cvfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvfsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gen_writes_graph_and_partition() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.txt");
    let p = dir.path().join("p.txt");
    let o = cvfsim(&[
        "gen",
        "--generator",
        "planar",
        "--nodes",
        "100",
        "--out",
        g.to_str().unwrap(),
        "--scheme",
        "greedy-locality",
        "--clients",
        "4",
        "--partition-out",
        p.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("External edges"));
    assert!(g.exists() && p.exists());
}

fn run_small(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--program",
        "color",
        "--mode",
        "EVE_S",
        "--nodes",
        "40",
        "--clients",
        "2",
        "--repetitions",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cvfsim(&args)
}

#[test]
fn run_succeeds_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &["--budget", "600", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["clients.csv", "throughput.csv", "cvf_trace.csv", "convergence.csv", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(stdout(&o).contains("mean"));
}

#[test]
fn budget_exhaustion_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &["--budget", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_small(dir.path(), &["--omission-prob", "1.5", "--budget", "10"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cvfsim(&["classify", "--trace", "/nonexistent.csv", "--program", "color"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_prints_benefits() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("times.csv");
    std::fs::write(
        &input,
        "column,mode,time\nplanar,SEQ,8545\nplanar,EVE-S,6173\nplanar,EVE-AS,2590\n",
    )
    .unwrap();
    let out = dir.path().join("cells.csv");
    let o = cvfsim(&["compare", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("27.8%"), "{text}");
    assert!(text.contains("×3.3"), "{text}");
    assert!(std::fs::read_to_string(out).unwrap().contains("EVE-S vs. SEQ"));

    std::fs::write(&input, "column,mode,time\nplanar,EVE-S,6173\n").unwrap();
    let o = cvfsim(&["compare", "--input", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn classify_stored_trace() {
    let trace = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/cvf_trace_116.csv");
    let o = cvfsim(&["classify", "--trace", trace.to_str().unwrap(), "--program", "color"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let counts: Vec<&str> = text.lines().skip(2).filter_map(|l| l.split_whitespace().last()).collect();
    assert_eq!(counts, ["116", "35", "81", "6"]);
}
