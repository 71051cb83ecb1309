use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kinslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinslab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn bgk_coefficients_equal_tau() {
    let out = kinslab(&["coeffs", "--kernel", "bgk", "--tau", "1", "--n", "16", "--v-max", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let nu = json["nu"].as_f64().unwrap();
    let k = json["k"].as_f64().unwrap();
    assert!((nu - 1.0).abs() < 1e-6, "nu = {nu}");
    assert!((k - 1.0).abs() < 1e-6, "k = {k}");
}

#[test]
fn check_passes_on_shipped_configs() {
    for name in ["slab_bgk.toml", "inflow_hard_sphere.toml"] {
        let path = config(name);
        let out = kinslab(&["check", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("entropy inequality"));
    }
}

#[test]
fn history_is_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = config("slab_bgk.toml");
    let mut files = Vec::new();
    for (k, threads) in ["1", "2", "1"].iter().enumerate() {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = kinslab(&[
            "--threads",
            threads,
            "run",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "11",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push(std::fs::read(out_dir.join("history.csv")).unwrap());
        let summary: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["seed"], 11);
        assert_eq!(summary["ok"], true);
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(files[0].clone()).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "t,mass,mom_x,mom_y,mom_z,energy,H,dissipation,influx_mass,outflux_mass,influx_entropy,outflux_entropy,residual_mass,residual_energy,residual_entropy"
    );
    assert!(text.lines().count() > 5);
}

#[test]
fn random_initial_data_follows_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("random.toml");
    std::fs::write(
        &cfg,
        r#"
[grid]
n_per_axis = 6
[mesh]
n_cells = 4
[kernel]
family = { kind = "bgk", tau = 1.0 }
[time]
t_end = 0.05
[initial]
kind = "random"
amplitude = 0.2
[boundary]
kind = "equilibrium"
"#,
    )
    .unwrap();
    let history = |seed: &str| {
        let out_dir = dir.path().join(format!("seed{seed}"));
        let out = kinslab(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("history.csv")).unwrap()
    };
    assert_eq!(history("1"), history("1"));
    assert_ne!(history("1"), history("2"));
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[grid]\nn_per_axis = 8\nbogus = 1\n").unwrap();
    let out = kinslab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn sweep_reports_trace_bound() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("sweep.json");
    let path = config("sweep.toml");
    let out = kinslab(&["sweep", "--config", path.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    let entries = json["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    assert!(entries.iter().all(|e| e["trace"]["ok"] == true));
}
