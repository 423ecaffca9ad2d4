//! End-to-end checks of the binary: subcommands, config handling, and the
//! exit-code contract (0 success, 1 config error, 2 verification failure,
//! 3 divergence-terminated training).

use std::fs;
use std::process::Command;

fn artbp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_artbp"))
}

#[test]
fn schedule_stats_succeeds_and_copies_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{"policy": {"type": "constant_c", "c": 0.25}, "n_draws": 5000, "seed": 7}"#,
    )
    .unwrap();
    let status = artbp()
        .args(["schedule-stats", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("config.json").exists());
    assert!(out.join("histogram.csv").exists());
    assert!(out.join("summary.csv").exists());
    let copied = fs::read_to_string(out.join("config.json")).unwrap();
    assert!(copied.contains("\"experiment\": \"schedule_stats\""));
    assert!(copied.contains("\"c\": 0.25"));
}

#[test]
fn unknown_config_key_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"n_draws": 10, "no_such_key": true}"#).unwrap();
    let output = artbp()
        .args(["schedule-stats", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("config error"), "stderr: {stderr}");
}

#[test]
fn failed_verification_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    // An unachievable z threshold makes every statistical leg fail.
    fs::write(
        &config,
        r#"{
            "cases": [{"label": "ib", "system": {"kind": "influence_balancing", "p": 2, "n": 2, "theta0": 0.4}, "horizon": 8}],
            "policies": [{"type": "constant_c", "c": 0.2}],
            "n_samples": 500,
            "probe_samples": 200,
            "z_threshold": 1e-9
        }"#,
    )
    .unwrap();
    let status = artbp()
        .args(["verify-unbiased", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("cfg.json");
    // An absurd learning rate overflows the state within a few updates.
    fs::write(
        &config,
        r#"{"eta0": 1e6, "total_steps": 2000, "truncated_lengths": [10], "artbp_seeds": []}"#,
    )
    .unwrap();
    let status = artbp()
        .args(["influence-balancing", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    // The partial trace was still flushed.
    let text = fs::read_to_string(out.join("truncated_L10.csv")).unwrap();
    assert!(text.lines().count() > 1, "expected a partial trace");
}

#[test]
fn seed_flag_overrides_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{"total_steps": 50, "truncated_lengths": [], "artbp_seeds": [1, 2, 3]}"#,
    )
    .unwrap();
    let status = artbp()
        .args(["influence-balancing", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--seed", "9"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("artbp_seed9.csv").exists());
    assert!(!out.join("artbp_seed1.csv").exists());
}
