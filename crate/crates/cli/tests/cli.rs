//! Runs the `stitchcell` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn stitchcell(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stitchcell"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

/// The machine-readable error record printed on stderr.
fn error_record(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not one JSON record ({e}): {text}"))
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("JSON summary on stdout")
}

/// Report text without its timestamp header line.
fn report_body(path: &Path) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.split_once('\n').unwrap().1.to_string()
}

#[test]
fn demo_gen_learn_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();

    let gen = stdout_json(&stitchcell(out, &["--seed", "7", "demo-gen", "--n", "5"]));
    assert_eq!(gen["command"], "demo-gen");
    for k in 0..5 {
        assert!(out.join(format!("demos/demo_{k}.jsonl")).is_file());
    }
    for d in ["A", "B", "C", "D"] {
        assert!(out.join(format!("designs/design_{d}.json")).is_file());
    }

    let demos = out.join("demos");
    let learned = stdout_json(&stitchcell(out, &["--jobs", "1", "learn", "--demos", demos.to_str().unwrap(), "--k-max", "8"]));
    assert_eq!(learned["primitives"].as_array().unwrap().len(), 5);
    for p in learned["primitives"].as_array().unwrap() {
        let k = p["K"].as_u64().unwrap();
        assert!((2..=8).contains(&k), "{p}");
    }

    let models: Vec<String> = (1..=5).map(|k| format!("model/model_p{k}.json")).collect();
    let manifest = serde_json::json!({
        "design_file": "designs/design_A.json",
        "model_files": models,
        "noise_preset": "none",
        "n_stitches": 2,
        "seed": 1,
    });
    let manifest_path = out.join("run.json");
    std::fs::write(&manifest_path, manifest.to_string()).unwrap();
    let run_dir = out.join("run1");
    let run = stdout_json(&stitchcell(&run_dir, &["run", "--manifest", manifest_path.to_str().unwrap()]));
    assert_eq!(run["summary"]["overall"]["success_rate"], 1.0);
    for f in ["report.txt", "records.jsonl", "traces.jsonl"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let traces = std::fs::read_to_string(run_dir.join("traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 2);

    // same manifest, same report apart from the timestamp line
    let run_dir2 = out.join("run2");
    stdout_json(&stitchcell(&run_dir2, &["run", "--manifest", manifest_path.to_str().unwrap()]));
    assert_eq!(report_body(&run_dir.join("report.txt")), report_body(&run_dir2.join("report.txt")));

    let rep_dir = out.join("rep");
    let records = run_dir.join("records.jsonl");
    let rep = stdout_json(&stitchcell(&rep_dir, &["report", "--records", records.to_str().unwrap()]));
    assert_eq!(rep["summary"], run["summary"]);
}

#[test]
fn puncture_bench_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = stitchcell(
        dir.path(),
        &["puncture-bench", "--seeds", "1", "--noise", "none", "--resolution", "640x480", "--fps", "20", "--tau", "1"],
    );
    let summary = stdout_json(&o);
    assert_eq!(summary["failures"], 0);
    assert!(summary["mean_error_mm"].as_f64().unwrap() < 0.05);
    let report = std::fs::read_to_string(dir.path().join("puncture_report.txt")).unwrap();
    assert!(report.contains("trial,seed,"));
    assert_eq!(report.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).count(), 6);
}

#[test]
fn validation_errors_exit_one_with_a_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cases: Vec<Vec<&str>> = vec![
        vec!["bogus"],
        vec!["--jobs", "0", "demo-gen"],
        vec!["learn", "--demos", "/nonexistent/demo_0.jsonl"],
        vec!["puncture-bench", "--grid", "1:2"],
        vec!["puncture-bench", "--resolution", "640by480"],
        vec!["puncture-bench", "--noise", "loud"],
        vec!["puncture-bench", "--design", "Z"],
        vec!["demo-gen", "--n", "0"],
        vec!["--config", "/nonexistent/config.json", "demo-gen"],
    ];
    for args in cases {
        let o = stitchcell(out, &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        let e = error_record(&o);
        assert_eq!(e["exit_code"], 1, "{args:?}");
        assert!(e["error"].is_string() && e["message"].is_string(), "{args:?}: {e}");
    }

    let bad = out.join("bad.json");
    std::fs::write(&bad, r#"{"cell": {"fps": 20.0}, "unknown": 1}"#).unwrap();
    let o = stitchcell(out, &["--config", bad.to_str().unwrap(), "demo-gen"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_record(&o)["error"], "InvalidConfig");
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "not a directory").unwrap();
    let o = stitchcell(&blocker, &["demo-gen", "--n", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_record(&o)["exit_code"], 2);
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = stitchcell(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["demo-gen", "learn", "run", "puncture-bench", "report"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
