use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn swarmpath(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarmpath"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = swarmpath(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn scenario(dir: &Path, name: &str, extra: &[&str]) {
    let mut args = vec!["scenario", "--out", name];
    args.extend_from_slice(extra);
    ok(dir, &args);
}

#[test]
fn every_command_has_help() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["scenario", "train", "simulate", "compare", "certify"] {
        let out = swarmpath(dir.path(), &[cmd, "--help"]);
        assert!(out.status.success(), "{cmd}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("--format"));
    }
}

#[test]
fn zero_samples_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    scenario(dir.path(), "s.json", &[]);
    let out = swarmpath(dir.path(), &["train", "--scenario", "s.json", "--samples", "0", "--out", "w.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_twice_gives_identical_weights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "s.json", &[]);
    let args = |out| ["train", "--scenario", "s.json", "--samples", "1500", "--hidden", "5", "--epochs", "4", "--seed", "9", "--out", out];
    let report = json(&ok(d, &["--format", "json"].iter().chain(&args("a.json")).copied().collect::<Vec<_>>()));
    ok(d, &args("b.json"));
    assert_eq!(std::fs::read(d.join("a.json")).unwrap(), std::fs::read(d.join("b.json")).unwrap());
    assert!(report["test_mse"].as_f64().unwrap().is_finite());
    assert!(d.join("a.json.report.json").exists());
    let manifest: Value = serde_json::from_slice(&std::fs::read(d.join("a.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn mismatched_weights_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "big.json", &[]);
    scenario(d, "small.json", &["--agents", "2", "--targets", "1", "--threats", "1"]);
    ok(d, &["train", "--scenario", "big.json", "--samples", "500", "--hidden", "3", "--epochs", "2", "--out", "w.json"]);
    let out = swarmpath(d, &["simulate", "--scenario", "small.json", "--weights", "w.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("28"));
}

#[test]
fn simulate_writes_trace_summary_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "s.json", &["--seed", "4"]);
    let out = ok(
        d,
        &[
            "--format", "json", "simulate", "--scenario", "s.json", "--case", "2", "--resync", "0", "--ticks-max", "3000",
            "--trace", "t.jsonl", "--summary", "sum.json", "--csv", "t.csv",
        ],
    );
    let summary = json(&out);
    assert_eq!(summary["complete"], true);
    assert_eq!(summary["captures"].as_array().unwrap().len(), 5);
    for f in ["t.jsonl", "sum.json", "t.csv"] {
        assert!(d.join(format!("{f}.manifest.json")).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(d.join("t.csv")).unwrap();
    assert!(csv.starts_with("tick,agent,x,y,target\n"));
}

#[test]
fn single_worker_traces_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "s.json", &["--seed", "6"]);
    for name in ["a.jsonl", "b.jsonl"] {
        let out = Command::new(env!("CARGO_BIN_EXE_swarmpath"))
            .current_dir(d)
            .env("SWARMPATH_THREADS", "1")
            .args(["simulate", "--scenario", "s.json", "--seed", "3", "--ticks-max", "400", "--trace", name])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(d.join("a.jsonl")).unwrap(), std::fs::read(d.join("b.jsonl")).unwrap());
}

#[test]
fn certify_reports_and_strict_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "s.json", &[]);
    let out = ok(d, &["--format", "json", "certify", "--scenario", "s.json", "--target-speed", "0", "--verify"]);
    let r = json(&out);
    assert_eq!(r["passed"], true);
    assert_eq!(r["monitor"]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(r["certificate"]["step_bounds"].as_array().unwrap().len(), 10);

    // Targets faster than v/√2 per tick break the speed condition.
    let fast = ["certify", "--scenario", "s.json", "--target-speed", "0.25"];
    let out = ok(d, &fast);
    assert!(String::from_utf8_lossy(&out.stdout).contains("not certified"));
    let strict = swarmpath(d, &[&fast[..], &["--strict"]].concat());
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn compare_emits_rows_and_polylines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    scenario(d, "s.json", &["--threats", "0"]);
    let out = ok(d, &["--format", "json", "compare", "--scenario", "s.json", "--seeds", "10", "--polylines", "poly"]);
    let rows = json(&out);
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 10);
    for r in rows {
        assert_eq!(r["surrogate"]["complete"], true);
        assert_eq!(r["baseline"]["complete"], true);
        assert!(r["divergence"].as_f64().is_some());
    }
    assert!(d.join("poly/seed9_baseline.csv").exists());
}
