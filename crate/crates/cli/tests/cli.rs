#![allow(clippy::excessive_precision)]

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ancova-cp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ancova-cp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn rows(out: &Output) -> Vec<Vec<String>> {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn malformed_point_is_a_usage_error() {
    let out = run(&["cp", "--point", "0,zero,0"]);
    assert!(!out.status.success());
    let out = run(&["cp", "--point", "0,0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("3 comma-separated"));
}

#[test]
fn cp_with_both_estimators() {
    let out = run(&["cp", "--point", "0,0,0", "--estimator", "both", "--runs", "20000", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = rows(&out);
    assert_eq!(r[0], ["gamma_1", "gamma_2", "gamma_3", "estimate", "se", "runs", "estimator", "seed"]);
    assert_eq!(r.len(), 3);
    assert_eq!(r[1][6], "naive");
    assert_eq!(r[2][6], "conditioned");
    let (a, sa): (f64, f64) = (r[1][3].parse().unwrap(), r[1][4].parse().unwrap());
    let (b, sb): (f64, f64) = (r[2][3].parse().unwrap(), r[2][4].parse().unwrap());
    assert!((a - b).abs() <= 3.0 * (sa * sa + sb * sb).sqrt());
}

#[test]
fn thresholds_off_gives_nominal_coverage() {
    let out = run(&["cp", "--point", "0,0,0", "--thresholds-off", "--estimator", "naive", "--runs", "40000"]);
    let r = rows(&out);
    let (p, se): (f64, f64) = (r[1][3].parse().unwrap(), r[1][4].parse().unwrap());
    assert!((p - 0.95).abs() <= 3.0 * se, "{p} ± {se}");
}

#[test]
fn grid_is_byte_identical_across_runs_and_threads() {
    let args = ["grid", "--density", "3", "--runs", "3000", "--seed", "9"];
    let a = run(&args);
    let b = bin().args(args).env("ANCOVA_CP_THREADS", "3").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(rows(&a).len(), 28);
}

#[test]
fn config_run_section_and_flag_override() {
    let path = tmp("design.toml");
    let text = format!(
        "{}\n[run]\nruns = 500\nseed = 77\nestimator = \"naive\"\n",
        include_str!("../../core/data/reference_design.toml")
    );
    std::fs::write(&path, text).unwrap();
    let p = path.to_str().unwrap();
    let r = rows(&run(&["--config", p, "cp", "--point", "0.1,0,0"]));
    assert_eq!(&r[1][5..], ["500", "naive", "77"]);
    let r = rows(&run(&["--config", p, "cp", "--point", "0.1,0,0", "--runs", "600", "--seed", "3"]));
    assert_eq!(&r[1][5..], ["600", "naive", "3"]);

    std::fs::write(&path, "x = [[1.0]]").unwrap();
    assert!(!run(&["--config", p, "quantiles"]).status.success());
    assert!(!run(&["--config", "/nonexistent/design.toml", "quantiles"]).status.success());
}

#[test]
fn profile_csv_has_c_column() {
    let out_path = tmp("profile.csv");
    let out = run(&[
        "profile",
        "--offsets",
        "0,0.137,0.06",
        "--c-range",
        "-0.2,0.1",
        "--points",
        "5",
        "--runs",
        "2000",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("c,gamma_1,gamma_2,gamma_3,estimate"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn oracle_and_quantiles_report_json() {
    let out = run(&["oracle", "--runs", "2000", "--point", "0.1,-0.05,0.2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["agreement_rate"].as_f64().unwrap() >= 0.999);

    let out = run(&["quantiles"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["l_tau"].as_f64().unwrap() - 2.416005377177941507).abs() < 1e-8);
    assert_eq!(v["m"], 18);
}

#[test]
fn min_on_a_coarse_grid() {
    let out = run(&["min", "--density", "11", "--runs", "2000", "--points", "11"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let min1 = v["min1"]["estimate"].as_f64().unwrap();
    let min2 = v["min2"]["estimate"].as_f64().unwrap();
    let overall = v["overall"].as_f64().unwrap();
    assert_eq!(overall, min1.min(min2));
    assert!(v["argmin"].as_array().unwrap().len() == 3);
}
