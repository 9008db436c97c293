use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &str, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torus-scope"))
        .args(args)
        .arg("--config")
        .arg(configs().join(config))
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn data_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn ns_analyze_reports_repelling_curve_below_beta() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ns-analyze", "--set", "epsilon=0.025", "--set", "b=-5"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ns_report.json")).unwrap()).unwrap();
    let beta = v["report"]["beta_eps"].as_f64().unwrap();
    assert!(v["parameters"]["alpha"].as_f64().unwrap() < beta);
    assert_eq!(v["report"]["verdict"], "subcritical-repelling-curve");
    assert_eq!(v["classification"]["curve"], "repelling-curve");
    assert_eq!(v["classification"]["fixed_point"], "attracting");
    assert_eq!(v["schema_version"], 1);
    assert!(v["tolerances"]["newton"].is_number());
    assert!(v["version"].is_string());
}

#[test]
fn zero_system_melnikov_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["melnikov", "--set", "epsilon=0.2"], "zero.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&dir.path().join("melnikov.csv"));
    assert_eq!(rows.len(), 9);
    for r in rows {
        assert_eq!(r.len(), 10);
        assert!(r[2..].iter().all(|c| c.parse::<f64>().unwrap() == 0.0));
    }
}

#[test]
fn sweep_flips_once_across_beta() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["sweep"], "sweep-b5.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 21);
    let off: Vec<&Vec<String>> = rows.iter().filter(|r| r[4].parse::<f64>().unwrap().abs() > 1e-12).collect();
    let labels: Vec<&str> = off.iter().map(|r| r[7].as_str()).collect();
    let flips = labels.windows(2).filter(|w| w[0] != w[1]).count();
    assert_eq!(flips, 1);
    assert_eq!(labels.first(), Some(&"no-curve"));
    assert_eq!(labels.last(), Some(&"attracting-curve"));
    assert!(off.iter().all(|r| r[6] == "supercritical-attracting-curve"));
}

#[test]
fn outputs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for cmd in ["ns-analyze", "fixed-point", "sweep"] {
        let cfg = if cmd == "sweep" { "sweep-b5.cfg" } else { "pwl3d.cfg" };
        assert_eq!(run(&[cmd], cfg, a.path()).status.code(), Some(0));
        assert_eq!(run(&[cmd], cfg, b.path()).status.code(), Some(0));
    }
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
    }
}

#[test]
fn csv_headers_carry_version_and_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["fixed-point", "--tol", "newton=1e-10"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("fixed_point.csv")).unwrap();
    assert!(text.starts_with(&format!("# torus-scope {}", env!("CARGO_PKG_VERSION"))));
    assert!(text.contains("newton=1.0000000000000000e-10"));
    let row = &data_rows(&dir.path().join("fixed_point.csv"))[0];
    assert_eq!(row.len(), 4);
    let mantissa = row[0].split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ns-analyze", "--set", "gamma=1"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["exit_code"], 2);
    assert_eq!(e["schema_version"], 1);
    assert!(e["message"].as_str().unwrap().contains("gamma"));

    let o = run(&["ns-analyze"], "missing.cfg", dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["exit_code"], 2);

    let o = run(&["curve"], "pwl3d-cartesian.cfg", dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["ns-analyze", "--tol", "sharpness=1"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analysis_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["ns-analyze", "--set", "run.seed=0.5, 0"], "zero.cfg", dir.path());
    assert_eq!(o.status.code(), Some(1));
    let e = stderr_json(&o);
    assert_eq!(e["exit_code"], 1);
    assert_eq!(e["error"], "real-eigenvalues");
}

#[test]
fn section_and_simulate_on_reduced_system() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["section", "--set", "run.iterations=20"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0));
    let rows = data_rows(&dir.path().join("section.csv"));
    assert_eq!(rows.len(), 21);
    let o = run(&["simulate", "--set", "run.t_end=12.566370614359172"], "pwl3d.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data_rows(&dir.path().join("simulate.csv")).len() > 2);
}

#[test]
fn cartesian_section_hits_lie_on_positive_half_plane() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["section", "--set", "run.t_end=200"], "pwl3d-cartesian.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.path().join("section.csv"));
    assert!(rows.len() > 10);
    for r in rows {
        let v: Vec<f64> = r.iter().map(|c| c.parse().unwrap()).collect();
        assert!(v[2].abs() < 1e-9);
        assert!(v[1] > 0.0);
    }
}

#[test]
fn curve_command_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["curve", "--set", "run.curve.probe=false"], "pwl3d-exact.cfg", dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&dir.path().join("curve.csv"));
    assert_eq!(rows.len(), 128);
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("curve.json")).unwrap()).unwrap();
    assert!(v["curve"]["residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["curve"]["winding_number"], 1);
    assert_eq!(v["curve"]["stability"], "repelling");
    assert_eq!(v["curve"]["direction"], "inverse");
}
