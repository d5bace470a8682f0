use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-heat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn run_config(name: &str, args: &[&str], out: &Path) -> Output {
    let cfg = config(name);
    let mut all = vec!["--config", cfg.to_str().unwrap()];
    all.extend_from_slice(args);
    run(&all, out)
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: impl AsRef<Path>) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn spectrum_writes_one_row_per_eigenvalue() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("spectrum");
    let o = run_config("constant_dirichlet.toml", &["spectrum", "--n-max", "10"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(out.join("spectrum.csv"));
    assert_eq!(rows.len(), 10);
    assert!(out.join("eigenfunction_001.csv").exists());
    let summary = json(out.join("spectrum.json"));
    assert_eq!(summary["certified"], Value::Bool(true));
    // first eigenvalue: root of 2k cot k = k^2 below pi
    let l1: f64 = rows[0][1].parse().unwrap();
    assert!((l1 - 1.076_873_986_311_803_7_f64.powi(2)).abs() < 1e-8, "{l1}");
}

#[test]
fn manifest_describes_the_run() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("gaps");
    let o = run_config("constant_neumann.toml", &["gap-report", "--n-max", "12"], &out);
    assert_eq!(code(&o), 0);
    let m = json(out.join("manifest.json"));
    assert_eq!(m["tool"], "hybrid-heat");
    assert_eq!(m["command"], "gap-report");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["exit_code"], 0);
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert!(files.contains(&"gaps.csv") && files.contains(&"gap_report.json"), "{files:?}");
    assert_eq!(csv_rows(out.join("gaps.csv")).len(), 11);
    // nothing is left behind in the parent directory
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(leftovers.len(), 1, "{leftovers:?}");
}

#[test]
fn invalid_coefficients_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(config("constant_dirichlet.toml")).unwrap().replace("mass = 1.0", "mass = -1.0");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = run(&["--config", cfg.to_str().unwrap(), "spectrum"], &out);
    assert_eq!(code(&o), 2);
    let err = json(out.join("error.json"));
    assert_eq!(err["exit_code"], 2);
    assert!(err["error"].as_str().unwrap().contains("mass"), "{err}");
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line: Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(line["exit_code"], 2);
}

#[test]
fn missing_config_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let o = run(&["--config", "/nonexistent/problem.toml", "spectrum"], &dir.path().join("out"));
    assert_eq!(code(&o), 2);
}

#[test]
fn first_mode_control_meets_the_residual_tolerance() {
    let dir = TempDir::new().unwrap();
    for name in ["constant_dirichlet.toml", "constant_neumann.toml"] {
        let out = dir.path().join(name);
        let o = run_config(name, &["control", "--init", "mode:1"], &out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let m = json(out.join("moments.json"));
        let residuals = m["report"]["residuals"].as_array().unwrap();
        assert_eq!(residuals.len(), 8);
        assert!(residuals.iter().all(|r| r.as_f64().unwrap().abs() <= 1e-8), "{residuals:?}");
        let rows = csv_rows(out.join("control.csv"));
        assert!(rows.iter().any(|r| r[2].parse::<f64>().unwrap() != 0.0));
    }
}

#[test]
fn zero_initial_state_gives_zero_control() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("zero");
    let o = run_config("constant_dirichlet.toml", &["control", "--init", "zero"], &out);
    assert_eq!(code(&o), 0);
    assert!(csv_rows(out.join("control.csv")).iter().all(|r| r[2].parse::<f64>().unwrap() == 0.0));
}

#[test]
fn too_many_modes_is_an_ill_conditioned_problem() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("n40");
    let o = run_config("constant_dirichlet.toml", &["control", "--init", "mode:1", "--n-modes", "40"], &out);
    assert_eq!(code(&o), 3);
    let err = json(out.join("error.json"));
    assert!(err["error"].as_str().unwrap().contains("ill-conditioned"), "{err}");
}

#[test]
fn short_horizon_is_an_ill_conditioned_problem() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("short");
    let args = ["verify", "--init", "mode:1", "--n-modes", "12", "--horizon", "0.01"];
    let o = run_config("constant_dirichlet.toml", &args, &out);
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_passes_on_the_shipped_problems() {
    let dir = TempDir::new().unwrap();
    for name in ["constant_dirichlet.toml", "constant_neumann.toml"] {
        let out = dir.path().join(name);
        let o = run_config(name, &["verify", "--init", "mode:1"], &out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = &json(out.join("verification.json"))["report"];
        assert_eq!(r["pass"], Value::Bool(true));
        assert!(r["modal_terminal_energy"].as_f64().unwrap() <= 1e-10);
        assert!(out.join("trajectory_galerkin.csv").exists() && out.join("trajectory_fd.csv").exists());
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = ["--seed", "42", "simulate", "--init", "random:5", "--method", "fd", "--nx", "64", "--nt", "512"];
        assert_eq!(code(&run_config("variable_dirichlet.toml", &args, out)), 0);
    }
    for f in ["trajectory_fd.csv", "terminal_fd.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // a different seed draws a different state
    let c = dir.path().join("c");
    let args = ["--seed", "43", "simulate", "--init", "random:5", "--method", "fd", "--nx", "64", "--nt", "512"];
    assert_eq!(code(&run_config("variable_dirichlet.toml", &args, &c)), 0);
    assert_ne!(fs::read(a.join("terminal_fd.csv")).unwrap(), fs::read(c.join("terminal_fd.csv")).unwrap());
}

#[test]
fn zero_input_simulation_dissipates() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("sim");
    let args = ["simulate", "--init", "expr:1 + x;cos(2*x)", "--input", "zero", "--nx", "64", "--nt", "512"];
    let o = run_config("variable_dirichlet.toml", &args, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory_galerkin.csv", "trajectory_fd.csv"] {
        let e: Vec<f64> = csv_rows(out.join(f)).iter().map(|r| r[1].parse().unwrap()).collect();
        assert!(e.windows(2).all(|p| p[1] <= p[0]), "{f}");
    }
}

#[test]
fn variable_tail_follows_the_travel_time_law() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("var");
    let o = run_config("variable_dirichlet.toml", &["spectrum", "--n-max", "30", "--eigenfunctions", "0"], &out);
    assert_eq!(code(&o), 0);
    let ratios: Vec<f64> = csv_rows(out.join("spectrum.csv")).iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(ratios[19..].iter().all(|r| (r - 1.0).abs() <= 0.15), "{ratios:?}");
}
