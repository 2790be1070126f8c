//! End-to-end checks of the `hkprop` binary and its exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hk_core::harness::config::ExperimentConfig;

fn hkprop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hkprop")).args(args).output().expect("spawn hkprop")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load_and_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "schema_version = 1\nname = \"x\"\neps = [0.1]\nbogus = 3\n").unwrap();
    let out = hkprop(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = hkprop(&["run", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_ne!(missing.status.code(), Some(0));
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("free.toml");
    std::fs::write(
        &cfg_path,
        r#"schema_version = 1
name = "free-hk"
eps = [0.1, 0.05]
method = "hk"

[hamiltonian]
name = "free"

[initial]
q = 0.0
p = 1.0

[time]
t0 = 0.0
t1 = 0.5

[grid]
points = 512
half_width = 6.0
"#,
    )
    .unwrap();
    let results = dir.path().join("results");
    let out = hkprop(&["run", cfg_path.to_str().unwrap(), "--out", results.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(results.join("free-hk_summary.json").exists());
    assert!(results.join("free-hk_errors.csv").exists());

    let rep = hkprop(&["report", results.to_str().unwrap()]);
    assert_eq!(rep.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("free-hk"));

    let empty = hkprop(&["report", dir.path().join("nothing").to_str().unwrap()]);
    assert_ne!(empty.status.code(), Some(0));
}

#[test]
fn check_fast_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let out = hkprop(&["check", "--criteria", "4,8", "--out", dir.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains("[PASS]")).count(), 2);
    assert!(dir.path().join("acceptance.json").exists());
}
