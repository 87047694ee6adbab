//! End-to-end tests of the `brwre` binary: exit codes, error wording,
//! emitted files, and reproducibility of reruns across processes and
//! thread counts.

use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brwre"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("reading {name}: {e}"))
}

#[test]
fn env_sample_emits_table_report_and_meta() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "env-sample",
        "--out",
        out_dir.to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let csv = read(&out_dir, "results.csv");
    assert!(csv.starts_with("k,l_k,kappa_k,big_k,w_k"));
    // Default environment length plus the header.
    assert_eq!(csv.lines().count(), 65);

    let report: serde_json::Value = serde_json::from_str(&read(&out_dir, "report.json")).unwrap();
    assert_eq!(report["seed"], 5);
    assert!(report["fingerprint"].is_string());
    assert!(report["theta_star"].as_f64().unwrap() > 0.0);

    let meta: serde_json::Value = serde_json::from_str(&read(&out_dir, "meta.json")).unwrap();
    assert_eq!(meta["subcommand"], "env-sample");
    assert_eq!(meta["config_hash"], report["config_hash"]);
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[env]\nlaw = \"deterministic\"\nlawn = 3\n").unwrap();
    let out = run(&["env-sample", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("lawn"),
        "stderr should name the unknown key: {}",
        stderr_of(&out)
    );
}

#[test]
fn invalid_grid_width_exits_2_naming_the_key() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[global.grid]\ndx = 0.5\n").unwrap();
    let out = run(&[
        "barrier-prob",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("global.grid"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn simulate_rejects_generations_beyond_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[env]\nn = 4\n\n[brw]\nn = 10\n").unwrap();
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("brw.n"), "stderr: {err}");
    assert!(err.contains("env.n = 4"), "stderr: {err}");
}

#[test]
fn report_before_tightness_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("empty");
    let out = run(&["report", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("tightness"),
        "stderr should point at the tightness subcommand: {}",
        stderr_of(&out)
    );
}

#[test]
fn tightness_then_report_renders_svg() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        "[tightness]\nn_ladder = [4, 8]\nenvs = 2\nreplicas_per_env = 4\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "tightness",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = read(&out_dir, "results.csv");
    assert!(csv.starts_with("n,replicas,q01"));
    assert_eq!(csv.lines().count(), 3);

    let out = run(&[
        "report",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let svg = read(&out_dir, "summary.svg");
    assert!(
        svg.starts_with("<svg"),
        "not an SVG: {}",
        &svg[..40.min(svg.len())]
    );
    assert!(svg.contains("<path"), "spread curves missing");
    let report: serde_json::Value = serde_json::from_str(&read(&out_dir, "report.json")).unwrap();
    assert!(report["iqr_ratio_last_over_first"].as_f64().unwrap() > 0.0);
}

#[test]
fn seed_override_reaches_the_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    std::fs::write(&cfg, "[global]\nseed = 1\n").unwrap();
    let out_dir = tmp.path().join("a");
    let out = run(&[
        "env-sample",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&read(&out_dir, "report.json")).unwrap();
    assert_eq!(report["seed"], 2, "--seed must override the config file");
}

#[test]
fn verify_all_is_reproducible_and_thread_invariant() {
    let tmp = TempDir::new().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let dir_c = tmp.path().join("c");
    for (dir, threads) in [(&dir_a, "1"), (&dir_b, "8"), (&dir_c, "1")] {
        let out = run(&[
            "verify-all",
            "--threads",
            threads,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "threads={threads} stderr: {}",
            stderr_of(&out)
        );
    }
    // Rerun in a fresh process: byte-identical outputs.
    assert_eq!(read(&dir_a, "results.csv"), read(&dir_c, "results.csv"));
    assert_eq!(read(&dir_a, "report.json"), read(&dir_c, "report.json"));
    // One worker versus eight: byte-identical outputs.
    assert_eq!(read(&dir_a, "results.csv"), read(&dir_b, "results.csv"));
    assert_eq!(read(&dir_a, "report.json"), read(&dir_b, "report.json"));
}
