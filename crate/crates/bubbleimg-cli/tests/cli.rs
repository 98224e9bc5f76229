use std::fs;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bubbleimg")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_two() {
    let o = bin(&["scan", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bin(&["invert"]).status.code(), Some(2));
    assert_eq!(bin(&["invert", "--data", "x", "--regime", "3"]).status.code(), Some(2));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn computational_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = bin(&["invert", "--data", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error") || stderr(&o).contains("error:"));
    assert_eq!(bin(&["scan", "--scenario", "no-such-scenario.json"]).status.code(), Some(1));
}

#[test]
fn scan_then_invert_homogeneous() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let recon = dir.path().join("recon.json");
    let o = bin(&["scan", "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.contains("scenario ") && e.contains("far-field normalization: lim |x| e^{-ik|x|} u^s"));
    let o = bin(&["invert", "--data", data.to_str().unwrap(), "--out", recon.to_str().unwrap(), "--regime", "1", "--tau", "1e-6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("scenario "));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&recon).unwrap()).unwrap();
    let rho = r["rho0"].as_array().unwrap();
    assert_eq!(rho.len(), 125);
    for x in rho {
        assert!((x.as_f64().unwrap() / 1000.0 - 1.0).abs() < 1e-3);
    }
    assert_eq!(r["regime"], "regime1");
}

#[test]
fn seed_flag_changes_noise_only() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let p = dir.path().join(name);
        let o = bin(&["simulate", "--seed", seed, "--z", "0,0,1250", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(p).unwrap()).unwrap()
    };
    let a = run("1", "a.json");
    let b = run("2", "b.json");
    assert_eq!(a["z"], serde_json::json!([0.0, 0.0, 1250.0]));
    assert_eq!(a["samples"].as_array().unwrap().len(), 64 - a["skipped"].as_array().unwrap().len());
    assert_ne!(a["samples"], b["samples"]);
    assert_eq!(a["samples"][0]["omega"], b["samples"][0]["omega"]);
}

#[test]
fn simulate_single_frequency() {
    let o = bin(&["simulate", "--scenario", "phantom", "--omega", "0.8", "--z", "1250,0,0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let s = v["samples"].as_array().unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(s[0]["omega"], 0.8);
    assert_eq!(v["generator"], "regime1");
}

#[test]
fn spectrum_of_the_body_wave_ball() {
    let o = bin(&["spectrum", "--scenario", "bodywave", "--h", "0.25", "--count", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let c = v["clusters"].as_array().unwrap();
    assert_eq!(c[0]["multiplicity"], 1);
    assert_eq!(c[1]["multiplicity"], 3);
    let lam = c[0]["lambda"].as_f64().unwrap();
    assert!((lam / (4.0 / std::f64::consts::PI.powi(2)) - 1.0).abs() < 0.05);
    let w = c[0]["omega_n0"].as_f64().unwrap();
    assert!((w * w * 1000.0 * lam / 405.28 - 1.0).abs() < 1e-12);
    assert!((v["mu_shape"].as_f64().unwrap() / (8.0 * std::f64::consts::PI / 3.0) - 1.0).abs() < 1e-12);
    // Minnaert bubbles have no body-wave frequency.
    let o = bin(&["spectrum", "--h", "0.25", "--count", "1"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["clusters"][0]["omega_n0"].is_null());
}

#[test]
fn validate_subset_and_unknown_check() {
    let o = bin(&["validate", "--only", "AC2,AC5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 2);
    assert!(stderr(&o).contains("tolerances.rho0_linf = 0.02"));
    assert_eq!(bin(&["validate", "--only", "AC42"]).status.code(), Some(1));
}
