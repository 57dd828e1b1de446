use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gazeacc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazeacc"))
        .args(args)
        .output()
        .expect("run gazeacc")
}

fn manifest(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).expect("manifest")).expect("json")
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const RECORD: &str = r#"{"subject_id":"S1","session_id":"S1-indoor","device_id":"D00","environment":"indoor","pgt_x_cm":0.0,"pgt_y_cm":0.0,"pgt_z_cm":100.0,"ddev_x":0.0,"ddev_y":0.0,"ddev_z":1.0}"#;

#[test]
fn synth_then_directional_lists_grid_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n_subjects": 6, "samples_per_subject": 3000}"#).unwrap();
    let data = dir.path().join("d.jsonl");
    let out = gazeacc(&[
        "synth",
        "--config",
        &s(&cfg),
        "--out",
        &s(&data),
        "--seed",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let meta = dir.path().join("d.meta.jsonl");
    assert!(meta.exists());

    let synth = manifest(&dir.path().join("d.jsonl.manifest.json"));
    assert_eq!(synth["command"], "synth");
    assert_eq!(synth["effective_config"]["seed"], 3);
    assert_eq!(synth["effective_config"]["n_subjects"], 6);
    assert!(synth["inputs"][s(&cfg)].is_string());
    assert_eq!(synth["outputs"].as_object().unwrap().len(), 2);

    let results = dir.path().join("results");
    let out = gazeacc(&[
        "directional",
        "--samples",
        &s(&data),
        "--meta",
        &s(&meta),
        "--out",
        &s(&results),
        "--grid-step",
        "15",
        "--radius",
        "6",
        "--min-cell-samples",
        "150",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = manifest(&results.join("manifest.json"));
    let files = m["outputs"].as_object().unwrap();
    let mut names: Vec<&str> = files.keys().map(String::as_str).collect();
    names.sort();
    assert_eq!(
        names,
        [
            "bias_heatmap.svg",
            "bias_quiver.svg",
            "grid.csv",
            "mean_error_heatmap.svg",
            "sigma_major_heatmap.svg",
            "sigma_minor_heatmap.svg"
        ]
    );
    for name in names {
        assert!(results.join(name).exists());
    }
    let grid = &m["effective_config"]["grid"];
    assert_eq!(grid["step_deg"], 15.0);
    assert_eq!(grid["neighborhood_radius_deg"], 6.0);
    assert_eq!(grid["min_cell_samples"], 150);
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
    let rows = std::fs::read_to_string(results.join("grid.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 7 * 7);
}

#[test]
fn format_flag_limits_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n_subjects": 3, "samples_per_subject": 2000}"#).unwrap();
    assert!(
        gazeacc(&["synth", "--config", &s(&cfg), "--out", &s(&data)])
            .status
            .success()
    );
    assert!(dir.path().join("d.meta.csv").exists());
    let out = dir.path().join("o");
    let r = gazeacc(&[
        "directional",
        "--samples",
        &s(&data),
        "--out",
        &s(&out),
        "--grid-step",
        "15",
        "--format",
        "csv",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m = manifest(&out.join("manifest.json"));
    assert_eq!(m["outputs"].as_object().unwrap().len(), 1);
    assert_eq!(m["effective_config"]["format"], "csv");
}

#[test]
fn validate_reports_bad_norm_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RECORD.replace(r#""ddev_z":1.0"#, r#""ddev_z":1.1"#);
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, format!("{RECORD}\n{RECORD}\n{bad}\n{RECORD}\n")).unwrap();
    let out = gazeacc(&[
        "validate",
        "--samples",
        &s(&data),
        "--out",
        &s(&dir.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("d.jsonl:3:"), "{stderr}");
    assert!(stderr.contains("ddev"), "{stderr}");
    let report: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("v/violations.json")).unwrap())
            .unwrap();
    assert_eq!(report.as_array().unwrap().len(), 1);
    assert_eq!(report[0]["line"], 3);
}

#[test]
fn validate_accepts_clean_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, format!("{RECORD}\n{RECORD}\n")).unwrap();
    let out = gazeacc(&["validate", "--samples", &s(&data)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 violations"));
}

#[test]
fn analysis_commands_reject_invalid_data_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = RECORD.replace(r#""pgt_z_cm":100.0"#, r#""pgt_z_cm":5.0"#);
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, format!("{RECORD}\n{bad}\n")).unwrap();
    let out = gazeacc(&[
        "depth-curve",
        "--samples",
        &s(&data),
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = gazeacc(&["directional", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"grid": {"step_deg": 5.0, "colour": 1}}"#).unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(&data, format!("{RECORD}\n")).unwrap();
    let out = gazeacc(&[
        "directional",
        "--samples",
        &s(&data),
        "--out",
        &s(&dir.path().join("o")),
        "--config",
        &s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let out = gazeacc(&[
        "directional",
        "--samples",
        &s(&data),
        "--out",
        &s(&dir.path().join("o")),
        "--grid-step",
        "-1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn subject_error_writes_per_subject_and_split_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"n_subjects": 8, "samples_per_subject": 500}"#).unwrap();
    let data = dir.path().join("d.jsonl");
    assert!(
        gazeacc(&["synth", "--config", &s(&cfg), "--out", &s(&data)])
            .status
            .success()
    );
    let out = dir.path().join("se");
    let r = gazeacc(&[
        "subject-error",
        "--samples",
        &s(&data),
        "--meta",
        &s(&dir.path().join("d.meta.jsonl")),
        "--out",
        &s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let m = manifest(&out.join("manifest.json"));
    for name in [
        "subject_errors.csv",
        "split_gender_appearance.csv",
        "split_contact_lenses.csv",
        "split_eye_makeup.csv",
        "split_environment.csv",
        "binned_age.csv",
        "binned_ipd.csv",
    ] {
        assert!(m["outputs"][name].is_string(), "missing {name}");
    }
    let rows = std::fs::read_to_string(out.join("subject_errors.csv")).unwrap();
    // Overall plus indoor and outdoor rows for each subject.
    assert_eq!(rows.lines().count(), 1 + 3 * 8);
    assert_eq!(m["effective_config"]["binning"]["bins"], 10);
}

#[test]
fn subject_error_requires_meta() {
    let out = gazeacc(&["subject-error", "--samples", "x.jsonl", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn selftest_default_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gazeacc(&["selftest", "--out", &s(dir.path())]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    println!("{stdout}");
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 8);
    let m = manifest(&dir.path().join("manifest.json"));
    assert_eq!(m["effective_config"]["closure_samples"], 2_500_000);
}
