use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn pathhj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathhj")).args(args).output().unwrap()
}

fn run_in(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    pathhj(&args)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap()
}

#[test]
fn empty_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, "").unwrap();
    let o = run_in("solve-value", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn unknown_field_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"seed\": 1,\n  \"grid\": { \"n\": 1, \"h\": 1, \"T\": 1, \"step\": 0.1 },\n  \"valeu\": {}\n}\n").unwrap();
    let o = run_in("solve-value", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("valeu") && err.contains("line 4"), "{err}");
}

#[test]
fn missing_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("noseed.json");
    std::fs::write(&cfg, r#"{ "grid": { "n": 1, "h": 1, "T": 1, "step": 0.1 } }"#).unwrap();
    assert_eq!(run_in("verify-lyapunov", &cfg, &dir.path().join("out"), &[]).status.code(), Some(2));
}

#[test]
fn missing_section_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("stability", &scenario("delay.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_value_on_delay_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("solve-value", &scenario("delay.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    let v = r["details"]["result"]["value"].as_f64().unwrap();
    assert!((v - 3.5).abs() <= 0.02 * 3.5, "{v}");
    assert!(dir.path().join("path.csv").exists() && dir.path().join("sweep.csv").exists());
}

#[test]
fn resource_cap_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.json");
    std::fs::write(
        &cfg,
        r#"{ "seed": 1, "grid": { "n": 1, "h": 0.5, "T": 1.0, "step": 0.05 },
             "problem": { "kind": "hopf_lax" }, "value": { "coarse_step": 0.05, "leaf_cap": 1000 } }"#,
    )
    .unwrap();
    let o = run_in("solve-value", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_lyapunov_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("verify-lyapunov", &scenario("lyapunov.json"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let r = report(dir.path());
    assert_eq!(r["passed"], true);
    assert!(dir.path().join("modulus.csv").exists());
}

#[test]
fn tight_tolerance_scale_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("consistency", &scenario("consistency_transport.json"), dir.path(), &["--tolerance-scale", "1e-6"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(report(dir.path())["passed"], false);
}

#[test]
fn seed_override_is_recorded_and_changes_samples() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_in("derivatives", &scenario("derivatives_v.json"), a.path(), &[]);
    let o = run_in("derivatives", &scenario("derivatives_v.json"), b.path(), &["--seed-override", "99"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(b.path())["seed"], 99);
    assert_ne!(report(a.path())["details"], report(b.path())["details"]);
}

#[test]
fn step_override_replaces_grid_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in("solve-value", &scenario("delay.json"), dir.path(), &["--step", "0.02"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("path.csv")).unwrap();
    // [-1, 2] at 0.02
    assert_eq!(text.lines().count(), 1 + 151);
}

#[test]
fn identical_runs_give_identical_reports() {
    for (sub, name) in [("check-minimax", "transport_minimax.json"), ("stability", "stability_boundary.json")] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_in(sub, &scenario(name), a.path(), &[]);
        run_in(sub, &scenario(name), b.path(), &[]);
        assert_eq!(std::fs::read(a.path().join("report.json")).unwrap(), std::fs::read(b.path().join("report.json")).unwrap());
    }
}

#[test]
fn every_bundled_scenario_passes() {
    let pairs = [
        ("characteristics", "characteristics.json"),
        ("consistency", "consistency_hopf_lax.json"),
        ("derivatives", "derivatives_v.json"),
        ("solve-value", "hopf_lax_value.json"),
        ("stability", "stability_shift.json"),
    ];
    for (sub, name) in pairs {
        let dir = tempfile::tempdir().unwrap();
        let o = run_in(sub, &scenario(name), dir.path(), &[]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stdout));
    }
}
