use std::fs;
use std::process::Command;

fn semilin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semilin"));
    c.env("RUST_LOG", "warn");
    c
}

const TINY: &str = r#"
[problem]
id = "osc_square"
d = 2

[solver]
n_steps = 4
w = 4

[training]
iterations = 2
batch = 8
test_size = 8
final_test_size = 16
scaler_paths = 20

[evaluation]
traj_count = 2

[output]
checkpoints = false
"#;

#[test]
fn baseline_prints_json() {
    let out = semilin()
        .args(["baseline", "--problem", "nonlip", "--d", "2", "--samples", "2000", "--seed", "3"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["problem"], "nonlip");
    assert_eq!(v["z0"].as_array().unwrap().len(), 2);
    assert!(v["y0"].as_f64().unwrap().is_finite());
}

#[test]
fn solve_sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY).unwrap();
    let results = dir.path().join("results");

    let solve = semilin()
        .args(["solve", "--config", cfg.to_str().unwrap(), "--out", results.to_str().unwrap()])
        .env("SEMILIN_THREADS", "1")
        .output()
        .unwrap();
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));

    let sweep = semilin()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--axis", "N", "--values", "3,5", "--repeats", "1"])
        .args(["--out", results.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(sweep.status.success(), "{}", String::from_utf8_lossy(&sweep.stderr));
    assert!(results.join("summary.csv").exists());

    let tables = dir.path().join("tables");
    let report = semilin()
        .args(["report", "--in", results.to_str().unwrap(), "--out", tables.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let runs = fs::read_to_string(tables.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = semilin()
        .args(["report", "--in", ".", "--out", "."])
        .env("SEMILIN_THREADS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("SEMILIN_THREADS"));
}

#[test]
fn unknown_problem_fails() {
    let out = semilin()
        .args(["baseline", "--problem", "nope", "--d", "2", "--samples", "10", "--seed", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
