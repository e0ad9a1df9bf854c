use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_merton-fk"));
    c.env_remove("MERTON_FK_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.json");
    fs::write(
        &path,
        r#"{
  "model": {"preset": "paper-example"},
  "numerics": {"n_t": 101, "n_y": 201, "condition_samples": 2000},
  "mc": {"n_paths": 2000, "step": 0.004, "seed": 3, "n_points": 2}
}
"#,
    )
    .unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(text.ends_with('\n'), "{} is not newline-terminated", path.display());
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bounds_for_constant_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = run(&["bounds", "--preset", "merton-constant", "--zeta", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("ledger.csv"));
    assert_eq!(rows[0], ["name", "value"]);
    let get = |n: &str| rows.iter().find(|r| r[0] == n).unwrap()[1].parse::<f64>().unwrap();
    assert_eq!(get("D_star"), 0.0);
    assert_eq!(get("zeta"), 1.0);
    assert!(out.join("ledger.json").exists() && out.join("manifest.json").exists());
}

#[test]
fn solve_then_replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = dir.path().join("first");
    let o = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let deltas = read_csv(&first.join("deltas.csv"));
    assert_eq!(deltas[0], ["n", "delta", "metric"]);
    let d: Vec<f64> = deltas[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(d[0] > 0.1 && d[7] < 1e-9, "{d:?}");

    let second = dir.path().join("second");
    let o = run(&["replay", first.join("manifest.json").to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["h.csv", "deltas.csv", "residual.csv"] {
        assert_eq!(fs::read(first.join(name)).unwrap(), fs::read(second.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let target = dir.path().join("env-out");
    let o = bin()
        .args(["strategy", "--config", cfg.to_str().unwrap()])
        .env("MERTON_FK_OUT", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&target.join("strategy.csv"));
    assert_eq!(rows[0], ["t", "y1", "pi_1", "c", "a_star", "b_1"]);
    assert_eq!(rows.len(), 1 + 101 * 201);
    assert!(target.join("strategy_bounds.json").exists());
}

#[test]
fn mc_check_and_simulate_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("mc");
    let o = run(&["mc-check", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0) | Some(2)));
    let rows = read_csv(&out.join("mc_check.csv"));
    assert_eq!(rows[0], ["t", "y1", "pde", "mc", "stderr", "z"]);
    assert_eq!(rows.len(), 3);

    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out.join("paths.csv"));
    assert_eq!(rows[0], ["t", "mean", "q05", "q50", "q95"]);
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("j.json")).unwrap()).unwrap();
    assert!(j["optimal"]["j_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn report_bundles_the_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("r");
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let ns: Vec<u64> = r["comparison"].as_array().unwrap().iter().map(|c| c["n"].as_u64().unwrap()).collect();
    assert_eq!(ns, [5, 8, 14]);
    assert_eq!(r["all_bounds_hold"], true);
    assert!(r["residual_sup"].as_f64().unwrap() < 1e-3);
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"model\": {\"preset\": \"paper-example\"},\n  \"numerics\": {\"nt\": 3}\n}\n").unwrap();
    let o = run(&["solve", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nt") && err.contains("line 3"), "{err}");

    let o = run(&["solve", "--preset", "no-such-model", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&["solve", "--preset", "two-asset-sv", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("one factor"));
}

#[test]
fn two_factor_report_uses_the_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("two");
    let o = run(&["report", "--preset", "two-asset-sv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["solved"], false);
    assert_eq!(r["m"], 2);
    assert_eq!(r["all_bounds_hold"], true);
}
