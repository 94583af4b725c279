use std::process::{Command, Output};

use qgemv::bench::{read_csv, CSV_HEADER};
use qgemv::toymodel::{Manifest, ToyDecoder, MANIFEST_FILE};

fn qbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qbench"))
        .args(args)
        .env_remove("QBENCH_SEED")
        .output()
        .unwrap()
}

#[test]
fn verify_exits_zero() {
    let out = qbench(&["verify"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS qmat-golden"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sizes.csv");
    let out = qbench(&[
        "sweep", "--sizes", "64,128", "--reps", "2", "--warmup", "1", "--seed", "7", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# qbench "));
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let recs = read_csv(&path).unwrap();
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.reps == 2 && r.threads == 1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speedup"));
}

#[test]
fn sweep_to_stdout() {
    let out = qbench(&["sweep", "--sizes", "32", "--reps", "1", "--warmup", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().nth(1), Some(CSV_HEADER));
    assert_eq!(stdout.lines().count(), 4);
}

#[test]
fn threads_sweep_records_each_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("threads.csv");
    let out = qbench(&[
        "threads", "--threads", "1,2", "--policy", "alloff,bind", "--prompt", "3", "--tokens", "2", "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = read_csv(&path).unwrap();
    assert_eq!(recs.len(), 2 * 2 * 2);
    let points: Vec<(&str, usize, &str)> =
        recs.iter().map(|r| (r.kernel.as_str(), r.threads, r.policy.as_str())).collect();
    assert_eq!(points[0], ("prefill", 1, "alloff"));
    assert_eq!(points[3], ("generate", 1, "bind"));
    assert_eq!(points[7], ("generate", 2, "bind"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("placement: policy=bind threads=2"));
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["bogus"][..],
        &["sweep", "--sizes", "100"],
        &["sweep", "--reps", "x"],
        &["threads", "--policy", "numa"],
        &["threads", "--preset", "llama70b"],
        &["export-model"],
    ] {
        assert_eq!(qbench(args).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(qbench(&["--help"]).status.code(), Some(0));
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qbench"))
        .args(["export-model", "--preset", "toy", "--seed", "1", "--dir"])
        .arg(dir.path())
        .env("QBENCH_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest = Manifest::parse(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest.seed, 99);
    assert_eq!(manifest.name, "toy");

    let bad = Command::new(env!("CARGO_BIN_EXE_qbench"))
        .args(["sweep", "--sizes", "32"])
        .env("QBENCH_SEED", "-3")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn exported_model_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = qbench(&["export-model", "--preset", "toy", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let (model, manifest) = ToyDecoder::import(dir.path()).unwrap();
    assert_eq!(manifest.matrices.len(), 14);
    let fresh = ToyDecoder::new(model.shapes(), 42).unwrap();
    assert_eq!(model.matrix(1, "wdown"), fresh.matrix(1, "wdown"));
}
