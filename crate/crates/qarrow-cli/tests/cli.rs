//! End-to-end tests of the qarrow binary: config validation diagnostics,
//! experiment outputs, manifest checksums and reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qarrow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qarrow"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn validate_reports_clean_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "ok.cfg",
        "physics.tau = 1.0\nphysics.seed = 7\n",
    );
    let out = qarrow(tmp.path(), &["validate", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("0 error(s)"));
}

#[test]
fn validate_flags_zero_tau_with_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", "physics.tau = 0\n");
    let out = qarrow(tmp.path(), &["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("tau") && text.contains("> 0"), "{text}");
}

#[test]
fn validate_warns_on_coarse_dt_without_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "warn.cfg", "physics.dt = 0.1\n");
    let out = qarrow(tmp.path(), &["validate", "--config", &cfg]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(
        text.contains("warning") && text.contains("0 error(s)"),
        "{text}"
    );
}

#[test]
fn unknown_key_fails_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "typo.cfg",
        "physics.tau = 1.0\nphysics.tua = 2\n",
    );
    let out = qarrow(tmp.path(), &["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("2:1: error"), "{}", stdout(&out));
}

#[test]
fn parse_error_carries_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "parse.cfg", "physics.tau = 1.0\n   nonsense\n");
    let out = qarrow(tmp.path(), &["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("2:4"), "{}", stderr(&out));
}

#[test]
fn kahler_cert_passes_with_tiny_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "kahler-cert",
            "--set",
            "statistics.n_traj=50",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("run/kahler_report.json")).unwrap(),
    )
    .unwrap();
    for check in report["checks"].as_array().unwrap() {
        assert!(check["pass"].as_bool().unwrap());
        assert!(check["max_defect"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn frechet_cert_passes_with_tiny_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "frechet-cert",
            "--set",
            "statistics.n_traj=25",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn flows_cert_passes_with_tiny_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "flows-cert",
            "--set",
            "statistics.n_traj=10",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
}

#[test]
fn girsanov_check_passes_on_small_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "girsanov-check",
            "--set",
            "statistics.n_traj=200",
            "--set",
            "physics.total_time=0.2",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/girsanov.json")).unwrap())
            .unwrap();
    assert!(report[0]["pass"].as_bool().unwrap());
}

#[test]
fn simulate_writes_exact_columns_and_valid_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.cfg",
        "physics.total_time = 0.01\nstatistics.n_traj = 2\noutput_dir = run\n",
    );
    let out = qarrow(tmp.path(), &["simulate", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = fs::read_to_string(tmp.path().join("run/traj0000_ch0.csv")).unwrap();
    assert!(csv.starts_with("step,t,r,dW,expectation\n"));
    assert_eq!(csv.lines().count(), 11);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["status"], "complete");
    let outputs = manifest["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("traj0000_ch0.csv"));
    assert!(outputs.contains_key("sidecar.json"));
    // Every referenced file exists and matches its checksum.
    for (name, digest) in outputs {
        let bytes = fs::read(tmp.path().join("run").join(name)).unwrap();
        let hex: String = {
            use sha2::{Digest, Sha256};
            Sha256::digest(&bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect()
        };
        assert_eq!(&hex, digest.as_str().unwrap(), "{name}");
    }
}

#[test]
fn rerun_is_bit_identical_and_thread_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "sim.cfg",
        "physics.total_time = 0.02\nstatistics.n_traj = 4\n",
    );
    let run = |dir: &str, threads: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_qarrow"))
            .current_dir(tmp.path())
            .env("QARROW_THREADS", threads)
            .args([
                "simulate",
                "--config",
                &cfg,
                "--set",
                &format!("output_dir={dir}"),
            ])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let mut names: Vec<_> = fs::read_dir(tmp.path().join(dir))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        names
            .iter()
            .map(|n| fs::read(tmp.path().join(dir).join(n)).unwrap())
            .collect::<Vec<_>>()
    };
    let a = run("run_a", "1");
    let b = run("run_b", "4");
    let c = run("run_c", "1");
    assert_eq!(a, b, "parallelism degree must be unobservable");
    assert_eq!(a, c, "reruns must be bit-identical");
}

#[test]
fn degenerate_arrow_scan_warns_and_stays_flat() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "arrow-scan",
            "--set",
            "physics.hamiltonian=0.5 Z0",
            "--set",
            "physics.total_time=0.05",
            "--set",
            "statistics.n_traj=40",
            "--set",
            "statistics.x_grid=-2:0:1",
            "--set",
            "statistics.bootstrap=50",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/manifest.json")).unwrap())
            .unwrap();
    let warnings = manifest["warnings"].as_array().unwrap();
    assert!(
        warnings
            .iter()
            .any(|w| w.as_str().unwrap().contains("degenerate")),
        "{warnings:?}"
    );
    let csv = fs::read_to_string(tmp.path().join("run/arrow_scan.csv")).unwrap();
    assert!(csv.starts_with("X,mean_lnR,stderr_lnR\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn train_then_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let train_out = qarrow(
        tmp.path(),
        &[
            "train-score",
            "--set",
            "physics.total_time=0.05",
            "--set",
            "statistics.n_traj=10",
            "--set",
            "learning.epochs=4",
            "--set",
            "learning.window=2",
            "--set",
            "learning.hidden=8,8",
            "--set",
            "output_dir=train",
        ],
    );
    assert!(train_out.status.success(), "{}", stderr(&train_out));
    for f in ["model.json", "loss.csv", "dataset.csv", "manifest.json"] {
        assert!(tmp.path().join("train").join(f).exists(), "{f}");
    }
    let eval_out = qarrow(
        tmp.path(),
        &[
            "eval-score",
            "--set",
            "physics.total_time=0.05",
            "--set",
            "statistics.n_traj=5",
            "--set",
            "learning.model=train/model.json",
            "--set",
            "output_dir=eval",
        ],
    );
    assert!(eval_out.status.success(), "{}", stderr(&eval_out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eval/eval.json")).unwrap())
            .unwrap();
    assert!(report["rmse_vs_innovation"].as_f64().unwrap().is_finite());
    assert!(report["n_samples"].as_u64().unwrap() > 0);
}

#[test]
fn numerical_failure_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "simulate",
            "--set",
            "physics.n_qubits=2",
            "--set",
            "physics.hamiltonian=1000 X0",
            "--set",
            "physics.channels=Z0,Z1",
            "--set",
            "physics.initial_state=x+,x+",
            "--set",
            "physics.feedback_x=-40",
            "--set",
            "physics.validate_every=1",
            "--set",
            "output_dir=run",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn reversal_demo_reports_both_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = qarrow(
        tmp.path(),
        &[
            "reversal-demo",
            "--set",
            "statistics.n_traj=20",
            "--set",
            "statistics.x_grid=-3:0:1.5",
            "--set",
            "statistics.bootstrap=20",
            "--set",
            "physics.dt=0.0005",
            "--set",
            "physics.total_time=0.1",
            "--set",
            "output_dir=run",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(tmp.path().join("run/arrow_scan_realized.csv").exists());
    assert!(tmp.path().join("run/arrow_scan_reference.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("run/summary.json")).unwrap())
            .unwrap();
    assert!(summary.get("realized").is_some());
    assert!(summary.get("reference").is_some());
}
