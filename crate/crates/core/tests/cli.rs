//! End-to-end tests that spawn the real binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seriesband"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Deterministic regression sample: smooth signal plus bounded pseudo-noise.
fn write_series_csv(path: &Path, n: usize) {
    let mut s = String::from("x,y\n");
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let noise = 0.3 * (37.0 * i as f64).sin() + 0.2 * (113.0 * i as f64).cos();
        let y = (x * 6.0 - 3.0).tanh() + noise;
        s.push_str(&format!("{x},{y}\n"));
    }
    fs::write(path, s).unwrap();
}

/// Treatment correlated with x, outcome linear in it: theta = 1.5.
fn write_plm_csv(path: &Path, n: usize) {
    let mut s = String::from("x,y,w\n");
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let w = (3.0 * x).sin() + 0.3 * (71.0 * i as f64).sin();
        let g = ((6.0 * x - 3.0).abs() + 1.0).ln() * if x > 0.5 { 1.0 } else { -1.0 };
        let y = 1.5 * w + g + 0.02 * (53.0 * i as f64).cos();
        s.push_str(&format!("{x},{y},{w}\n"));
    }
    fs::write(path, s).unwrap();
}

#[test]
fn ci_is_deterministic_with_nested_intervals() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    write_series_csv(&input, 150);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "ci",
            "--input",
            input.to_str().unwrap(),
            "--x",
            "0.5",
            "--alpha",
            "0.05",
            "--k-rule",
            "sim",
            "--seed",
            "3",
            "--B",
            "2000",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success(), "{}", stderr_of(&res));
    }
    let a = fs::read(out_a.join("report.json")).unwrap();
    let b = fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(a, b, "same seed must give byte-identical reports");

    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let point = &report["points"][0];
    let c_hat = point["critical_value"]["c_hat"].as_f64().unwrap();
    assert!(c_hat >= 1.96, "search-robust critical value {c_hat} below z");
    let std_lo = point["ci_standard"]["lower"].as_f64().unwrap();
    let std_hi = point["ci_standard"]["upper"].as_f64().unwrap();
    let rob_lo = point["ci_robust"]["lower"].as_f64().unwrap();
    let rob_hi = point["ci_robust"]["upper"].as_f64().unwrap();
    assert!(rob_lo <= std_lo && std_hi <= rob_hi, "robust interval must nest the standard one");
    assert_eq!(report["config"]["seed"], 3);
}

#[test]
fn malformed_csv_row_exits_2_citing_the_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "x,y\n0.1,1.0\n0.2,oops\n0.3,2.0\n").unwrap();
    let res = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--segments",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let msg = stderr_of(&res);
    assert!(msg.contains("line 3"), "stderr should cite the offending line: {msg}");
}

#[test]
fn critvals_identity_matches_the_closed_form() {
    let dir = TempDir::new().unwrap();
    let sigma = dir.path().join("id5.csv");
    let rows: Vec<String> = (0..5)
        .map(|i| {
            (0..5)
                .map(|j| if i == j { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    fs::write(&sigma, rows.join("\n")).unwrap();
    let res = run(&[
        "critvals",
        "--sigma",
        sigma.to_str().unwrap(),
        "--alpha",
        "0.05",
        "--B",
        "50000",
        "--seed",
        "2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("critvals.json")).unwrap()).unwrap();
    let c_hat = report["result"]["c_hat"].as_f64().unwrap();
    // Max of 5 independent |N(0,1)| at the 95th percentile.
    assert!((c_hat - 2.5690).abs() < 0.03, "c_hat = {c_hat}");
}

#[test]
fn critvals_rejects_an_invalid_matrix_with_exit_2() {
    let dir = TempDir::new().unwrap();
    let sigma = dir.path().join("bad.csv");
    fs::write(&sigma, "1,2\n2,1\n").unwrap();
    let res = run(&[
        "critvals",
        "--sigma",
        sigma.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn simulate_rejects_zero_replications() {
    let dir = TempDir::new().unwrap();
    let res = run(&[
        "simulate",
        "--model",
        "1",
        "--reps",
        "0",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn simulate_smoke_run_emits_both_reports() {
    let dir = TempDir::new().unwrap();
    let res = run(&[
        "simulate",
        "--model",
        "1",
        "--n",
        "100",
        "--reps",
        "4",
        "--B",
        "200",
        "--b-boot",
        "100",
        "--k-rule",
        "explicit",
        "--k-list",
        "4,5",
        "--seed",
        "5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let csv = fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config:"));
    assert_eq!(lines.next().unwrap(), "model,method,target,coverage,avg_length");
    // 3 methods x 4 eval points + 3 uniform rows.
    assert_eq!(lines.count(), 15);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("sim.json")).unwrap()).unwrap();
    assert_eq!(report["n_reps_completed"], 4);
    assert_eq!(report["config"]["master_seed"], 5);
}

#[test]
fn plm_intervals_contain_the_true_effect_in_a_low_noise_run() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("plm.csv");
    write_plm_csv(&input, 260);
    let res = run(&[
        "plm",
        "--input",
        input.to_str().unwrap(),
        "--k-list",
        "5,8,12",
        "--B",
        "4000",
        "--seed",
        "9",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("plm.json")).unwrap()).unwrap();
    let per_k = report["report"]["per_k"].as_array().unwrap();
    assert_eq!(per_k.len(), 3);
    for pk in per_k {
        let lo = pk["ci_robust"]["lower"].as_f64().unwrap();
        let hi = pk["ci_robust"]["upper"].as_f64().unwrap();
        assert!(lo <= 1.5 && 1.5 <= hi, "k={} interval [{lo}, {hi}] misses 1.5", pk["k"]);
    }
    assert!(report["report"]["c_hat"].as_f64().unwrap() >= 1.96);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# comment\nalpha=0.10\nseed=42\n").unwrap();
    let res = run(&[
        "critvals",
        "--ses",
        "1,2",
        "--config",
        cfg.to_str().unwrap(),
        "--alpha",
        "0.05",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("critvals.json")).unwrap()).unwrap();
    // Flag beats config; config fills what the flag left unset.
    assert_eq!(report["config"]["alpha"], 0.05);
    assert_eq!(report["config"]["seed"], 42);

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "alhpa=0.10\n").unwrap();
    let res = run(&[
        "critvals",
        "--ses",
        "1",
        "--config",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2), "unknown config keys must fail loudly");
}

#[test]
fn env_var_sets_the_output_directory() {
    let dir = TempDir::new().unwrap();
    let env_out = dir.path().join("from-env");
    let res = bin()
        .args(["critvals", "--ses", "1,3", "--B", "500"])
        .env("SERIESBAND_OUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr_of(&res));
    assert!(env_out.join("critvals.json").exists());
}

#[test]
fn fit_with_fixed_segments_writes_a_plain_band() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("data.csv");
    write_series_csv(&input, 120);
    let res = run(&[
        "fit",
        "--input",
        input.to_str().unwrap(),
        "--segments",
        "5",
        "--band",
        "--band-grid",
        "21",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", stderr_of(&res));
    let band = fs::read_to_string(dir.path().join("band.csv")).unwrap();
    let mut lines = band.lines();
    assert!(lines.next().unwrap().starts_with("# config:"));
    assert_eq!(lines.next().unwrap(), "x,center,lower,upper");
    assert_eq!(lines.count(), 21);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["k_used"], 5);
    assert!(report["band"]["critical_value"].is_null());
    // z quantile for a plain 95% band.
    let c = report["band"]["c_used"].as_f64().unwrap();
    assert!((c - 1.959964).abs() < 1e-5);
}
