//! End-to-end behaviour of the `singular-heat` binary.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_singular-heat"))
        .args(args)
        .output()
        .expect("spawn binary")
}

fn small_conf() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data/small.conf")
        .display()
        .to_string()
}

#[test]
fn empty_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("empty.conf");
    std::fs::write(&conf, "# nothing here\n").unwrap();
    let out = run(&["hardy", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty configuration"));
}

#[test]
fn bad_field_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "grid.m = 10\n\ntime.N = many\n").unwrap();
    let out = run(&["solve", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("time.N"), "{err}");
    let out = run(&["solve", "--override", "grid.m=11"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_refuses_subcritical_mu() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "spectrum",
        "--config",
        &small_conf(),
        "--override",
        "mu=0.2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("spectrum") && err.contains("mu > p2 mu*"), "{err}");
}

#[test]
fn hardy_writes_a_convergence_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["hardy", "--config", &small_conf(), "--out", dir.path().to_str().unwrap()]);
    // the coarse grids miss the 15% target, so invariants fail with code 1
    assert_eq!(out.status.code(), Some(1));
    let csv = std::fs::read_to_string(dir.path().join("hardy.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("m,h,nu,"));
    let nus: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(nus.len(), 2);
    assert!(nus[1] < nus[0] && nus[1] > 0.25);
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("hardy.m_list = 8, 10"));
    assert!(summary.contains("PASS hardy_trend"));
}

#[test]
fn stabilize_passes_and_timing_fills_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["stabilize", "--config", &small_conf(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("stabilize.csv").exists());

    let timed = tempfile::tempdir().unwrap();
    run(&["hardy", "--config", &small_conf(), "--timing", "--out", timed.path().to_str().unwrap()]);
    let csv = std::fs::read_to_string(timed.path().join("hardy.csv")).unwrap();
    assert!(!csv.contains("NA"));
}

#[test]
fn seed_changes_random_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "1"), (&b, "2")] {
        run(&["solve", "--config", &small_conf(), "--seed", seed, "--out", dir.path().to_str().unwrap()]);
    }
    let ra = std::fs::read(a.path().join("solve.csv")).unwrap();
    let rb = std::fs::read(b.path().join("solve.csv")).unwrap();
    assert_ne!(ra, rb);
}
