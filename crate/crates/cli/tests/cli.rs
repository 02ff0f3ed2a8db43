use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bhp-lab"));
    c.env_remove("BHPLAB_WORKERS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

const EXIT: &str = r#"{
    "model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1},
    "domain": {"kind": "ball", "center": [0.0], "radius": 1.0},
    "params": {"targets": [{"kind": "half-space", "normal": [1.0], "offset": 0.0}]},
    "n": 2048,
    "acceptance": [{"metric": "p.0", "min": 0.4, "max": 0.6}]
}"#;

fn report(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn check_kernel_on_stable_1d_gives_constant_two() {
    let out = bin()
        .args(["check-kernel", "--config"])
        .arg(configs().join("stable1d-kernel.json"))
        .args(["--n", "2000"])
        .output()
        .unwrap();
    let r = report(&out);
    assert_eq!(r["schema"], "bhplab/1");
    assert!((r["metrics"]["jt.C4"].as_f64().unwrap() - 2.0).abs() < 1e-5);
    assert!((r["metrics"]["jt.C5"].as_f64().unwrap() - 2.0).abs() < 1e-5);
}

#[test]
fn flags_override_config_and_env_overrides_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exit.json", EXIT);
    let out = bin()
        .args([
            "exit-stats",
            "--seed",
            "42",
            "--workers",
            "3",
            "--n",
            "1024",
            "--config",
        ])
        .arg(&cfg)
        .env("BHPLAB_WORKERS", "2")
        .output()
        .unwrap();
    let r = report(&out);
    assert_eq!(r["seed"], 42);
    assert_eq!(r["workers"], 2);
    assert_eq!(r["config"]["n"], 1024);
    assert_eq!(r["config"]["kind"], "exit-stats");
}

#[test]
fn reruns_are_identical_apart_from_the_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "exit.json", EXIT);
    let out_dir = dir.path().join("out");
    let run = || {
        let st = bin()
            .args(["exit-stats", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .status()
            .unwrap();
        assert!(st.success());
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("exit-stats-0.json")).unwrap()).unwrap();
        assert!(v["timestamp"].is_string());
        v.as_object_mut().unwrap().remove("timestamp");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn r_series_flag_sets_the_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "scan.json",
        r#"{
            "model": {"kind": "isotropic-stable", "alpha": 1.5, "dim": 2},
            "domain": {"kind": "slit-plane"},
            "params": {"grid": 4, "target_rel": 0.1, "cap": 4096, "gate": 0.2}
        }"#,
    );
    let out = bin()
        .args(["bhp-scan", "--r-series", "0.4,0.2,0.1,0.05", "--n", "1024", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/bhp-scan-0.json")).unwrap()).unwrap();
    assert_eq!(r["result"]["c_hat"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("out/bhp-scan-0-bhp-scan-r0.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,y1,y2,h1_x"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ not json");
    assert_eq!(
        bin()
            .args(["exit-stats", "--config"])
            .arg(&bad)
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    let cfg = write(dir.path(), "exit.json", EXIT);
    assert_eq!(
        bin().args(["ep-check", "--config"]).arg(&cfg).status().unwrap().code(),
        Some(1)
    );
    let mismatched = write(
        dir.path(),
        "kind.json",
        &EXIT.replacen('{', r#"{"kind": "chain-decay","#, 1),
    );
    assert_eq!(
        bin()
            .args(["exit-stats", "--config"])
            .arg(&mismatched)
            .status()
            .unwrap()
            .code(),
        Some(1)
    );
    assert_eq!(bin().arg("summarize").status().unwrap().code(), Some(1));

    // a scan whose points can never reach the precision gate
    let weak = write(
        dir.path(),
        "weak.json",
        r#"{
            "model": {"kind": "isotropic-stable", "alpha": 1.5, "dim": 2},
            "domain": {"kind": "slit-plane"},
            "params": {"grid": 4, "target_rel": 0.001, "cap": 1024, "gate": 0.001},
            "n": 1024
        }"#,
    );
    assert_eq!(
        bin().args(["bhp-scan", "--config"]).arg(&weak).status().unwrap().code(),
        Some(3)
    );
}

#[test]
fn summarize_passes_and_fails_on_declared_checks() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", EXIT);
    let st = bin()
        .args(["exit-stats", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(dir.path().join("g"))
        .status()
        .unwrap();
    assert!(st.success());
    let faulty = write(
        dir.path(),
        "faulty.json",
        r#"{
            "model": {"kind": "isotropic-stable", "alpha": 1.0, "dim": 1},
            "params": {"kernel": {"dim": 1, "kappa": {"kind": "constant", "value": 2.0},
                                  "scale": {"form": {"kind": "power", "alpha": 1.0}}}},
            "n": 1000,
            "acceptance": [{"metric": "jt.C4", "min": 1.99999, "max": 2.00001}]
        }"#,
    );
    let st = bin()
        .args(["check-kernel", "--config"])
        .arg(&faulty)
        .arg("--out")
        .arg(dir.path().join("f"))
        .status()
        .unwrap();
    assert!(st.success(), "a violated check is data, not a run failure");

    let ok = bin()
        .arg("summarize")
        .arg(dir.path().join("g/exit-stats-0.json"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));

    let bad = bin()
        .arg("summarize")
        .arg(dir.path().join("g/exit-stats-0.json"))
        .arg(dir.path().join("f/check-kernel-0.json"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    let missing = bin()
        .arg("summarize")
        .arg(dir.path().join("nope.json"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));
}
