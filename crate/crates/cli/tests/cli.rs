use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lyapframe"))
}

fn write_config(dir: &Path, v: &Value) -> std::path::PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn linear_spectrum_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &json!({"field": "linear_diag:2,0,-1", "frame_seed": 3, "T": 100, "experiments": [{"kind": "spectrum"}]}));
    let out = dir.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let s = read_json(&out.join("spectrum.json"));
    let vals: Vec<f64> = serde_json::from_value(s["estimate"]["values"].clone()).unwrap();
    for (v, e) in vals.iter().zip([2.0, 0.0, -1.0]) {
        assert!((v - e).abs() < 1e-6, "{vals:?}");
    }
}

#[test]
fn counterexample_csv_tail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"field": "rotation", "frame_seed": 1, "T": 200, "experiments": [{"kind": "counterexample", "lambda": -0.5, "a": 0.1}]}),
    );
    let out = dir.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let text = std::fs::read_to_string(out.join("counterexample.csv")).unwrap();
    let last = text.lines().last().unwrap();
    let rate: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert!((-0.05..=0.05).contains(&rate), "{last}");
}

#[test]
fn validate_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), &json!({"field": "lorenz", "frame_seed": 1, "T": 10, "experiments": [{"kind": "spectrum"}]}));
    let o = bin().args(["validate", "--config"]).arg(&good).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["errors"], json!([]));

    let bad = write_config(dir.path(), &json!({"field": "lorenz", "T": 10, "experiments": [{"kind": "spectrum"}]}));
    let o = bin().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["errors"][0]["pointer"], "/frame_seed");

    let dup = write_config(
        dir.path(),
        &json!({"field": "lorenz", "frame_seed": 1, "T": 10, "l_mode": {"mode": "explicit", "indices": [1, 1]}, "experiments": [{"kind": "spectrum"}]}),
    );
    let o = bin().args(["run", "--validate", "--config"]).arg(&dup).arg("--output").arg(dir.path().join("x")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate index 1"));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn partial_failure_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"field": "linear_diag:2,0,-1", "frame_seed": 1, "T": 20,
                "experiments": [{"kind": "spectrum"}, {"kind": "perturb", "perturbations": [{"kind": "constant", "a": [1, 2, 3, 4]}]}]}),
    );
    let out = dir.path().join("out");
    let st = bin().args(["run", "--threads", "2", "--config"]).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["failures"].as_array().unwrap().len(), 1);
    assert_eq!(m["failures"][0]["experiment"], "perturb");
    assert!(out.join("spectrum.json").exists());
}

#[test]
fn lorenz_reduced_matches_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &json!({"field": "lorenz", "frame_seed": 7, "T": 1000, "experiments": [{"kind": "spectrum"}, {"kind": "reduced", "tape_stride": 100}]}),
    );
    let out = dir.path().join("out");
    let st = bin().args(["run", "--config"]).arg(&cfg).arg("--output").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let r = read_json(&out.join("reduced.json"));
    let mismatch = r["max_mismatch"].as_f64().unwrap();
    println!("lorenz reduced vs spectrum mismatch at T=1000: {mismatch:e}");
    assert_eq!(r["selected_descending"], json!([1, 3]));
    assert!(mismatch <= 5e-3, "{mismatch}");
}
