//! End-to-end checks of the command-line interface: exit codes, output
//! formats and the configuration round trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphbm::config::ConfigDoc;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphbm"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn validate_accepts_fixtures() {
    for name in ["star.json", "two_triangle.json"] {
        let out = run(&["validate", "--config", fixture(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {out:?}");
    }
}

#[test]
fn validate_rejects_loop_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{
            "graph": {
                "vertices": ["v"],
                "internal_edges": [{"id": "i", "from": "v", "to": "v", "length": 1.0}],
                "external_edges": []
            },
            "boundary": {"v": {"p2": {"i": 1.0}}},
            "run": {"seed": 1}
        }"#,
    )
    .unwrap();
    let out = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("loop"), "stdout: {text}");
}

#[test]
fn validate_rejects_pure_jump_vertex() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("jumpy.json");
    fs::write(
        &path,
        r#"{
            "graph": {
                "vertices": ["a", "b"],
                "internal_edges": [{"id": "i", "from": "a", "to": "b", "length": 1.0}],
                "external_edges": []
            },
            "boundary": {
                "a": {"p4": [{"edge": "i", "x": 0.5, "weight": 2.5414940825367984}]},
                "b": {"p1": 1.0}
            },
            "run": {"seed": 1}
        }"#,
    )
    .unwrap();
    let out = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("pure-jump"), "stdout: {text}");
}

#[test]
fn validate_reports_normalization_sum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("off.json");
    fs::write(
        &path,
        r#"{
            "graph": {
                "vertices": ["v"],
                "internal_edges": [],
                "external_edges": [{"id": "e", "from": "v"}]
            },
            "boundary": {"v": {"p2": {"e": 1.1}}},
            "run": {"seed": 1}
        }"#,
    )
    .unwrap();
    let out = run(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("1.1"), "stdout: {text}");
}

#[test]
fn simulate_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        fixture("star.json").to_str().unwrap(),
        "--paths",
        "4",
        "--seed",
        "9",
        "--horizon",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("manifest.json").exists());
    for k in 0..4 {
        let f = out_dir.join(format!("traj_direct_{k:06}.csv"));
        let text = fs::read_to_string(&f).unwrap();
        assert!(text.starts_with("t,kind,location_kind,id,coordinate\n"));
    }
}

#[test]
fn simulate_zero_horizon_emits_start_only() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        fixture("star.json").to_str().unwrap(),
        "--paths",
        "2",
        "--seed",
        "9",
        "--horizon",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = fs::read_to_string(out_dir.join("traj_direct_000000.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "header + start + horizon: {text}");
    assert!(lines[1].starts_with("0,start,"));
    assert!(lines[2].starts_with("0,horizon,"));
}

#[test]
fn simulate_both_backends_writes_paired_sets() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        fixture("star.json").to_str().unwrap(),
        "--paths",
        "3",
        "--seed",
        "5",
        "--horizon",
        "0.5",
        "--backend",
        "both",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files_direct"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["files_pipeline"].as_array().unwrap().len(), 3);
}

#[test]
fn fw_trace_exact_mode_closes() {
    let out = run(&[
        "fw-trace",
        "--config",
        fixture("two_triangle.json").to_str().unwrap(),
        "--exact-rational",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stages = doc["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 6);
    assert_eq!(stages[0]["stage"], "local_split");
    assert_eq!(stages[5]["stage"], "final");
    // Exact weights are rendered as rational strings.
    assert!(stages[0]["data"]["v1"]["p1"].is_string());
    // The split stage records the normalizing factors.
    assert!(stages[0]["c0"]["v1"].is_number());
}

#[test]
fn fw_trace_float_mode_emits_numbers() {
    let out = run(&[
        "fw-trace",
        "--config",
        fixture("star.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(doc["stages"][0]["data"]["v"]["p1"].is_number());
}

#[test]
fn decompose_prints_shadow_edges() {
    let out = run(&[
        "decompose",
        "--config",
        fixture("two_triangle.json").to_str().unwrap(),
        "--part",
        "v4,v5,v6",
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let crossing = doc["crossing_edges"].as_array().unwrap();
    let names: Vec<&str> = crossing
        .iter()
        .map(|c| c["edge"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec!["i4", "i5", "i6", "i7"]);
    let sides = doc["subgraphs"].as_array().unwrap();
    assert_eq!(sides.len(), 2);
    for side in sides {
        assert_eq!(side["shadow_edges"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn verify_passes_on_fixture_and_emits_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "verify",
        "--config",
        fixture("two_triangle.json").to_str().unwrap(),
        "--paths",
        "2000",
        "--seed",
        "3",
        "--backend",
        "both",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout:\n{stdout}");
    // Table plus JSON lines on stdout, JSON lines on disk.
    assert!(stdout.contains("laplace_exit"), "{stdout}");
    assert!(stdout.contains("fw_recovery"), "{stdout}");
    assert!(stdout.contains("backend_ks_exit_time"), "{stdout}");
    assert!(stdout.contains("fw_trace_closure"), "{stdout}");
    let lines = fs::read_to_string(out_dir.join("verify_reports.jsonl")).unwrap();
    for line in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["pass"], true, "failing report: {line}");
    }
}

#[test]
fn config_round_trip_is_identity() {
    for name in ["star.json", "two_triangle.json"] {
        let text = fs::read_to_string(fixture(name)).unwrap();
        let doc = ConfigDoc::from_json(&text).unwrap();
        let text2 = doc.to_json() + "\n";
        assert_eq!(text, text2, "round trip changed {name}");
        let doc2 = ConfigDoc::from_json(&text2).unwrap();
        assert_eq!(doc, doc2);
    }
}
