use std::path::Path;
use std::process::{Command, Output};

fn offenv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offenv")).args(args).current_dir(cwd).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"eps_sim": 0.0, "eps_real_list": [0.1], "delta_list": [0.2], "alpha_list": [0.1],
    "n_list": [300], "seeds": [0, 1], "estimators": ["oracle", "simulator_only", "beta_dice_linear"]}"#;

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"eps_sim": 0.0}"#);
    let out = offenv(&["sweep", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = offenv(&["sweep", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_env_writes_mdps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = offenv(&["gen-env", "--config", &cfg, "--out", "envs"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let envs = dir.path().join("envs");
    let sim = std::fs::read_to_string(envs.join("mdp_sim.json")).unwrap();
    offenv_core::mdp::TabularMdp::from_json(&sim).unwrap();
    assert!(envs.join("mdp_real_0.1.json").exists());
    assert!(envs.join("policy_optimal.json").exists());
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = offenv(&["sweep", "--config", &cfg, "--out", "run", "--jobs", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    assert!(run.join("summary.json").exists());
    let rows = offenv_core::harness::read_rows_csv(std::fs::File::open(run.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 6);

    let out = offenv(&["report", "run/results.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("beta_dice_linear") && text.contains("-inf"));
    assert!(run.join("report.txt").exists() && run.join("report.csv").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    for (sub, seed) in [("a", "1"), ("b", "2")] {
        let out = offenv(&["sweep", "--config", &cfg, "--out", sub, "--seed", seed], dir.path());
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a/results.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/results.csv")).unwrap();
    assert_ne!(a, b);
}
