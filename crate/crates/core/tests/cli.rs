use std::path::Path;
use std::process::{Command, Output};

use trescaflow::io::{read_diagnostics_csv, read_study_csv, Snapshot};

const SMALL: &str = r#"
[geometry]
resolution = 2

[solver]
dt = 0.001
tau = 0.004
"#;

const ZERO_DATA: &str = r#"
name = "zero"

[geometry]
resolution = 2

[physics.force]
kind = "zero"

[physics.shear]
kind = "zero"

[physics.initial.field]
kind = "zero"

[solver]
dt = 0.01
tau = 0.03
"#;

fn trescaflow(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trescaflow"));
    cmd.args(args).arg("--config").arg(&cfg).current_dir(dir);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("TRESCAFLOW_")) {
        cmd.env_remove(k);
    }
    cmd.output().unwrap()
}

#[test]
fn verify_exits_zero_and_lists_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = trescaflow(dir.path(), "", &["verify", "--out", "v"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("v/verify.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    assert!(rows > 20);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn zero_data_run_writes_zero_valued_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = trescaflow(dir.path(), ZERO_DATA, &["run", "--out", "z", "--snapshot-every", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let z = dir.path().join("z");
    let rows = read_diagnostics_csv(&std::fs::read_to_string(z.join("diagnostics.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!((r.energy, r.div_norm, r.pressure_mean), (0.0, 0.0, 0.0));
    }
    for step in 0..=3 {
        let snap = Snapshot::read(&z.join(format!("snapshots/step_{step:06}.snap"))).unwrap();
        assert!(snap.vtilde.iter().all(|v| *v == 0.0));
    }
    let lift = Snapshot::read(&z.join("lifting.snap")).unwrap();
    assert!(lift.vtilde.iter().all(|v| *v == 0.0));
    let mesh = trescaflow::geometry::Mesh::from_text(&std::fs::read_to_string(z.join("mesh.txt")).unwrap()).unwrap();
    assert_eq!(mesh.hash(), lift.mesh_sha256);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(z.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"].as_array().unwrap().len(), 0);
    assert_eq!(summary["estimates"]["sup_l2"], 0.0);
}

#[test]
fn run_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for o in ["a", "b"] {
        let out = trescaflow(dir.path(), SMALL, &["run", "--out", o, "--seed", "7"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["diagnostics.csv", "summary.json", "mesh.txt", "lifting.snap"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn delta_study_with_two_values_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}\n[study]\ndeltas = [1e-2, 1e-3]\n");
    let out = trescaflow(dir.path(), &cfg, &["study-delta", "--out", "s"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("≥ 3 values required"));
}

#[test]
fn eps_study_writes_member_directories() {
    let dir = tempfile::tempdir().unwrap();
    let out = trescaflow(dir.path(), SMALL, &["study-eps", "--out", "e", "--workers", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let e = dir.path().join("e");
    let rows = read_study_csv(&std::fs::read_to_string(e.join("study_eps.csv")).unwrap()).unwrap();
    assert!(rows.iter().any(|r| r.metric == "functional_gap"));
    for i in 0..3 {
        assert!(e.join(format!("study_eps/member_{i:02}/diagnostics.csv")).exists());
    }
}

#[test]
fn unknown_key_is_reported_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = trescaflow(dir.path(), "[solver]\ndetla = 1e-3\n", &["run"]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"][0].as_str().unwrap().contains("solver.detla"));
}

#[test]
fn environment_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_trescaflow"))
        .args(["config", "--config"])
        .arg(&cfg)
        .env("TRESCAFLOW_SOLVER__DELTA", "0.05")
        .env("TRESCAFLOW_NAME", "overridden")
        .output()
        .unwrap();
    assert!(out.status.success());
    let parsed = trescaflow::config::parse_config(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(parsed.solver.delta, 0.05);
    assert_eq!(parsed.name, "overridden");
}
