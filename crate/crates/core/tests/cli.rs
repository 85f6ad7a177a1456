use std::fs;
use std::path::{Path, PathBuf};

use tempfile::TempDir;
use zoh_parabolic::cli::main_with_args;

const BASE: &str = "p = 1.0\nreaction = 15.0\nn_max = 32\ngrid_size = 201\n";

fn setup(body: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, body).unwrap();
    (dir, cfg)
}

fn run(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> zoh_parabolic::cli::Outcome {
    let mut args = vec!["zohpde".to_string(), cmd.into(), "--config".into(), cfg.display().to_string()];
    args.push("--out".into());
    args.push(out.display().to_string());
    args.extend(extra.iter().map(|s| s.to_string()));
    main_with_args(args)
}

fn first_lambda(out: &Path) -> f64 {
    let text = fs::read_to_string(out.join("eigen.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn eigen_closed_form_case() {
    let (dir, cfg) = setup(BASE);
    let out = dir.path().join("out");
    let o = run("eigen", &cfg, &out, &[]);
    assert_eq!(o.code, 0, "{}", o.message);
    assert!((first_lambda(&out) - (std::f64::consts::PI.powi(2) - 15.0)).abs() < 1e-9);
    assert!(out.join("validation.json").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn eigen_shooting_case() {
    let body = "p = { z = [0.0, 0.5, 1.0], values = [1.0, 1.5, 2.0] }\nq = -8.0\nn_max = 8\ngrid_size = 201\nb1 = 1.0\nb2 = -0.5\n";
    let (dir, cfg) = setup(body);
    let out = dir.path().join("out");
    let o = run("eigen", &cfg, &out, &[]);
    assert_eq!(o.code, 0, "{}", o.message);
    assert!(first_lambda(&out).is_finite());
}

#[test]
fn missing_n_max_is_usage_error() {
    let (dir, cfg) = setup("p = 1.0\nreaction = 15.0\n");
    let o = run("eigen", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.code, 64);
    let o = main_with_args(["zohpde", "eigen"]);
    assert_eq!(o.code, 64);
}

#[test]
fn reduced_design_reports_finite_period() {
    let (dir, cfg) = setup(&format!("{BASE}controller = \"reduced\"\npoles = [-1.0]\n"));
    let out = dir.path().join("out");
    let o = run("design", &cfg, &out, &[]);
    assert_eq!(o.code, 0, "{}", o.message);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("controller.json")).unwrap()).unwrap();
    let text = v.to_string();
    assert!(text.contains("T_star"), "{text}");
}

#[test]
fn backstepping_rejects_small_shift() {
    let (dir, cfg) = setup(&format!("{BASE}controller = \"backstepping\"\nc = -20.0\n"));
    let o = run("design", &cfg, &dir.path().join("out"), &[]);
    assert_ne!(o.code, 0);
    assert!(o.message.contains("c >="), "{}", o.message);
}

#[test]
fn open_loop_simulation_runs() {
    let body = format!("{BASE}controller = \"none\"\nt_end = 0.2\noutput_dt = 0.05\n");
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("out");
    // Without a certified period the sampling period must be explicit.
    assert_eq!(run("simulate", &cfg, &out, &[]).code, 64);
    fs::write(&cfg, format!("{body}T = 0.05\n")).unwrap();
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.code, 0, "{}", o.message);
    assert!(out.join("trace.csv").exists());
}

#[test]
fn simulate_is_reproducible() {
    let body = format!(
        "{BASE}controller = \"reduced\"\npoles = [-1.0]\nschedule = \"jittered\"\nt_end = 0.5\noutput_dt = 0.05\n"
    );
    let (dir, cfg) = setup(&body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("simulate", &cfg, &a, &["--seed", "7"]).code, 0);
    assert_eq!(run("simulate", &cfg, &b, &["--seed", "7"]).code, 0);
    assert_eq!(fs::read(a.join("trace.csv")).unwrap(), fs::read(b.join("trace.csv")).unwrap());
}

#[test]
fn oracle_outputs_written() {
    let body = format!(
        "{BASE}controller = \"reduced\"\npoles = [-1.0]\nt_end = 0.1\noutput_dt = 0.05\noracle_m = 100\noracle_dt = 1e-3\n"
    );
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &["--oracle"]);
    assert_eq!(o.code, 0, "{}", o.message);
    assert!(out.join("fd_trace.csv").exists());
    assert!(out.join("comparison.json").exists());
}

#[test]
fn zero_horizon_gives_initial_row() {
    let body = format!("{BASE}controller = \"reduced\"\npoles = [-1.0]\nt_end = 0.0\n");
    let (dir, cfg) = setup(&body);
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(o.code, 0, "{}", o.message);
    assert_eq!(fs::read_to_string(out.join("trace.csv")).unwrap().lines().count(), 2);
}

#[test]
fn sweep_single_entry_and_repeatable() {
    let body = format!("{BASE}controller = \"reduced\"\npoles = [-1.0]\nsweep_T = [0.1]\nsweep_horizon = 2.0\n");
    let (dir, cfg) = setup(&body);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("sweep", &cfg, &a, &[]).code, 0);
    assert_eq!(run("sweep", &cfg, &b, &[]).code, 0);
    let text = fs::read_to_string(a.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text, fs::read_to_string(b.join("sweep.csv")).unwrap());
}
