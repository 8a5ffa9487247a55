use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn decpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decpi"))
        .args(args)
        .env_remove("DECPI_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_values(dir: &Path) -> Vec<f64> {
    let text = fs::read_to_string(dir.join("iterations.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "value_b0").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

#[test]
fn solve_writes_log_checkpoints_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = decpi(&["solve", "--domain", "dec-tiger", "--max-iters", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = csv_values(&out);
    assert_eq!(v.len(), 3);
    assert!((v[0] + 150.0).abs() < 1e-6);
    assert!((v[1] + 137.0).abs() < 1e-6);
    for k in 0..3 {
        assert!(out.join(format!("checkpoints/iter-{k:04}.ctl")).exists());
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("sizes: 15,15"));
    assert!(summary.contains("termination: iteration-limit"));
}

#[test]
fn deterministic_reruns_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = ["solve", "--domain", "dec-tiger", "--algo", "hpi", "--max-iters", "3", "--deterministic", "--out", out.to_str().unwrap()];
    assert!(decpi(&args).status.success());
    let first: Vec<Vec<u8>> = ["iterations.csv", "controller.ctl", "points.txt", "summary.txt"]
        .iter()
        .map(|f| fs::read(out.join(f)).unwrap())
        .collect();
    assert!(decpi(&args).status.success());
    for (k, f) in ["iterations.csv", "controller.ctl", "points.txt", "summary.txt"].iter().enumerate() {
        assert_eq!(fs::read(out.join(f)).unwrap(), first[k], "{f}");
    }
}

#[test]
fn missing_problem_file_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = decpi(&["solve", "--file", "/no/such/problem.dpomdp", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(decpi(&["solve", "--domain", "dec-tiger", "--bogus"]).status.code(), Some(2));
}

#[test]
fn output_directory_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env-run");
    let o = Command::new(env!("CARGO_BIN_EXE_decpi"))
        .args(["solve", "--domain", "dec-tiger", "--max-iters", "1"])
        .env("DECPI_OUT_DIR", &out)
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("iterations.csv").exists());
    assert!(!tmp.path().join("decpi-out").exists());
}

#[test]
fn eval_prints_initial_value() {
    let o = decpi(&["eval", "--domain", "dec-tiger", "--init", "open-left,open-left"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("V(b0) = -150.000000"));
}

#[test]
fn exported_model_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("grid.dpomdp");
    assert!(decpi(&["export", "--domain", "meeting-grid", "-o", file.to_str().unwrap()]).status.success());
    let builtin = decpi(&["eval", "--domain", "meeting-grid"]);
    let parsed = decpi(&["eval", "--file", file.to_str().unwrap()]);
    assert!(parsed.status.success());
    let last = |o: &Output| stdout(o).lines().last().unwrap().to_string();
    assert_eq!(last(&builtin), last(&parsed));
}

#[test]
fn saved_controller_evaluates_to_logged_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(decpi(&["solve", "--domain", "dec-tiger", "--max-iters", "1", "--out", out.to_str().unwrap()]).status.success());
    let ctl = out.join("controller.ctl");
    let o = decpi(&["eval", "--domain", "dec-tiger", "--controller", ctl.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("V(b0) = -137.000000"));
}

#[test]
fn verify_passes_on_correlation_example() {
    let o = decpi(&["verify", "--domain", "correlation-example", "--episodes", "2000"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("-50.0000"));
    assert!(text.contains("100.000000"));
}
