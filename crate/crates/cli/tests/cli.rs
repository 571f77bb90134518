use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_siqrng"))
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn analyze_exact_reproduces_fixture_rate() {
    let path = fixture("aware_intensity_mu_9.6.json");
    let v = json(&run(&["analyze", path.to_str().unwrap(), "--exact"]));
    let rate = v["rate"].as_f64().unwrap();
    assert!((rate - 0.101).abs() < 1e-3, "{rate}");
}

#[test]
fn simulate_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rounds": 1000, "dimension": 2, "p_x": 0.1, "mu": 1.0}"#);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn bad_record_reports_category() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"variant": "blinding_aware"}"#).unwrap();
    let out = run(&["analyze", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[record]"));

    std::fs::write(
        &path,
        r#"{"variant": "blinding_aware", "N_Z": 10, "N_X": 10, "total_clicks_z": [1, 1],
            "single_clicks_z": [2, 1], "e_x": 0.1, "q": 1.0, "eps_sec": 1e-9}"#,
    )
    .unwrap();
    let out = run(&["analyze", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[record]"));
}

#[test]
fn rate_curve_writes_csv() {
    let out = run(&["rate-curve", "--steps", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "mu,p_x,rate");
    assert_eq!(lines.len(), 4);

    let out = run(&["rate-curve", "--sweep", "loss", "--from", "0", "--to", "10", "--steps", "2"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("loss_db,mu,p_x,rate"));
}

#[test]
fn simulate_is_reproducible_from_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"rounds": 20000, "dimension": 2, "p_x": 0.1, "mu": 1.0}"#);
    let a = json(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9"]));
    let b = json(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9"]));
    assert_eq!(a, b);
    assert_eq!(a["tally"]["rounds"], 20000);
}

#[test]
fn attack_demo_shows_legacy_gap() {
    let v = json(&run(&["attack-demo", "--seed", "1", "--rounds", "20000"]));
    assert_eq!(v["variants"]["blinding_aware"]["length"], 0);
    assert!(v["variants"]["legacy_squash"]["length"].as_u64().unwrap() > 0);
    assert!(run(&["attack-demo"]).status.code() != Some(0));
}

#[test]
fn simulate_extract_and_battery_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d, r#"{"rounds": 200000, "dimension": 2, "p_x": 0.01, "mu": 1.0}"#);
    let (raw, report, out, seed) = (d.join("raw.bin"), d.join("report.json"), d.join("out.bin"), d.join("seed.bin"));
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let sim = json(&run(&[
        "simulate",
        "--config",
        &p(&cfg),
        "--seed",
        "5",
        "--variant",
        "legacy",
        "--raw-out",
        &p(&raw),
        "--report-out",
        &p(&report),
    ]));
    let length = sim["report"]["length"].as_u64().unwrap();
    assert!(length > 0);

    let ext = json(&run(&[
        "extract",
        "--raw",
        &p(&raw),
        "--raw-len",
        &sim["raw_bits"].to_string(),
        "--report",
        &p(&report),
        "--seed",
        "3",
        "--seed-out",
        &p(&seed),
        "--out",
        &p(&out),
    ]));
    assert_eq!(ext["output_bits"].as_u64().unwrap(), length);
    assert_eq!(std::fs::metadata(&out).unwrap().len(), length.div_ceil(8));

    // a saved seed reproduces the output exactly
    let again = d.join("again.bin");
    json(&run(&[
        "extract",
        "--raw",
        &p(&raw),
        "--raw-len",
        &sim["raw_bits"].to_string(),
        "--report",
        &p(&report),
        "--toeplitz-seed",
        &p(&seed),
        "--out",
        &p(&again),
    ]));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());

    let count = (length / 1000).min(20);
    let battery = json(&run(&["test-battery", &p(&out), "--count", &count.to_string(), "--length", "1000", "--json"]));
    let rows = battery["tests"].as_array().unwrap();
    assert!(rows.iter().any(|r| r["name"] == "frequency"));
}
