//! Runs the compiled `nsem` binary end to end.

use std::fs;
use std::process::{Command, Output};

fn nsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsem"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn minstep_reports_em_and_nsem() {
    let o = nsem(&[
        "minstep", "--lambda", "1", "--sigma", "0.5", "--eps", "0.01", "--scheme", "both",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: Vec<f64> = stdout(&o)
        .trim()
        .split(", ")
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(v.len(), 2);
    assert!(
        (0.29..=0.31).contains(&v[0]) && (0.31..=0.33).contains(&v[1]),
        "{v:?}"
    );
}

#[test]
fn bad_epsilon_is_a_usage_error() {
    let o = nsem(&["minstep", "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));
    assert_eq!(nsem(&["paths", "--schemes", "rk4"]).status.code(), Some(2));
    assert_eq!(
        nsem(&["paths", "--unknown-flag", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn out_flag_writes_the_table_and_nothing_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("paths.csv");
    let o = nsem(&[
        "paths",
        "--steps",
        "8",
        "--seed",
        "3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,exact,em,nsem,bim\n"));
    assert_eq!(text.lines().count(), 10);
    let piped = nsem(&["paths", "--steps", "8", "--seed", "3"]);
    assert_eq!(stdout(&piped), text);
}

#[test]
fn numeric_failure_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blow.csv");
    let o = nsem(&[
        "paths",
        "--mu",
        "1e300",
        "--sigma",
        "0",
        "--steps",
        "4",
        "--schemes",
        "em",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!path.exists());
}

#[test]
fn convergence_prints_order_beside_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conv.csv");
    let o = nsem(&[
        "convergence",
        "--paths",
        "200",
        "--fine-steps",
        "128",
        "--levels",
        "4",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("order "), "{}", stdout(&o));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("h,error\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn exact_scheme_reports_no_order() {
    let o = nsem(&[
        "convergence",
        "--sigma",
        "0",
        "--scheme",
        "nsem",
        "--paths",
        "10",
        "--fine-steps",
        "64",
        "--levels",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n/a"));
    for line in stdout(&o).lines().skip(1) {
        let err: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(err < 1e-14, "{line}");
    }
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(
        &cfg,
        "# expectation at a coarse step\nh=2\npaths=200\nseed=9\nschemes=nsem\n",
    )
    .unwrap();
    let from_cfg = nsem(&["expectation", "--config", cfg.to_str().unwrap()]);
    let direct = nsem(&[
        "expectation",
        "--h",
        "2",
        "--paths",
        "200",
        "--seed",
        "9",
        "--schemes",
        "nsem",
    ]);
    assert_eq!(from_cfg.status.code(), Some(0));
    assert_eq!(from_cfg.stdout, direct.stdout);
    let overridden = nsem(&[
        "expectation",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "10",
    ]);
    assert_ne!(overridden.stdout, direct.stdout);
}
