//! Black-box tests of the `maskmod` binary: exit codes, machine-parsable
//! errors, flag coverage of the ablation grid and the end-to-end workflow.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_maskmod"))
}

fn write_config(dir: &Path, name: &str, seed: u64, task_bn: bool) -> PathBuf {
    let config = serde_json::json!({
        "arch": {
            "input": [2, 8, 8],
            "layers": [
                {"kind": "conv", "name": "conv1", "out_ch": 4, "kernel": 3, "stride": 1,
                 "padding": 1, "masked": true, "bn": true},
                {"kind": "relu"},
                {"kind": "max_pool", "size": 2},
                {"kind": "conv", "name": "conv2", "out_ch": 8, "kernel": 3, "stride": 1,
                 "padding": 1, "masked": true, "bn": true},
                {"kind": "relu"},
                {"kind": "max_pool", "size": 2},
                {"kind": "global_avg_pool"},
                {"kind": "dense", "name": "fc1", "out": 12, "masked": true},
                {"kind": "relu"}
            ]
        },
        "seed": seed,
        "task_bn": task_bn,
        "schedule": {"epochs": 2, "decay_epoch": 1, "batch_size": 32,
                      "adam_lr": 0.005, "sgd_lr": 0.005, "momentum": 0.9},
        "pretrain": {"epochs": 2, "decay_epoch": 1, "batch_size": 32,
                      "adam_lr": 0.002, "sgd_lr": 0.01, "momentum": 0.9},
        "data": {"source": "synthetic", "seed": seed, "n_tasks": 4,
                  "n_train": 64, "n_test": 64, "noise": 0.2}
    });
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn expect_success(output: &Output, what: &str) {
    assert!(
        output.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn pretrain(config: &Path, out: &Path) {
    let output = bin()
        .args(["pretrain", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    expect_success(&output, "pretrain");
}

#[test]
fn full_workflow_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "config.json", 7, true);
    let theta = dir.path().join("theta.mtmk");
    pretrain(&config, &theta);

    let omega = dir.path().join("invert.mtmk");
    let output = bin()
        .args(["add-task", "--theta"])
        .arg(&theta)
        .args([
            "--task",
            "invert",
            "--variant",
            "full",
            "--surrogate",
            "identity",
            "--config",
        ])
        .arg(&config)
        .arg("--out")
        .arg(&omega)
        .arg("--deterministic")
        .output()
        .unwrap();
    expect_success(&output, "add-task");
    let summary: serde_json::Value =
        serde_json::from_slice(&output.stdout).expect("add-task prints one JSON line");
    assert_eq!(summary["task"], "invert");

    // Metrics log exists, one JSON object per epoch.
    let metrics = std::fs::read_to_string(dir.path().join("invert.mtmk.metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);

    let report = dir.path().join("results.json");
    let output = bin()
        .args(["eval", "--theta"])
        .arg(&theta)
        .arg("--omega")
        .arg(&omega)
        .args(["--split", "test", "--report"])
        .arg(&report)
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    expect_success(&output, "eval");
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(results["invert"]["error"].is_f64());

    let emax = dir.path().join("emax.json");
    std::fs::write(&emax, "{\"invert\": 0.9}").unwrap();
    let output = bin()
        .args(["score", "--results"])
        .arg(&report)
        .arg("--baseline-errors")
        .arg(&emax)
        .output()
        .unwrap();
    expect_success(&output, "score");
    let score: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(score["total"].as_f64().unwrap() >= 0.0);
    // The results file now carries the per-task score too.
    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(results["invert"]["score"].is_f64());

    let density = dir.path().join("density.json");
    let output = bin()
        .args(["analyze", "--omega"])
        .arg(&omega)
        .arg("--report")
        .arg(&density)
        .output()
        .unwrap();
    expect_success(&output, "analyze");
    let layers: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&density).unwrap()).unwrap();
    assert_eq!(layers.as_array().unwrap().len(), 3);

    let output = bin()
        .args(["overhead", "--theta"])
        .arg(&theta)
        .arg("--omegas")
        .arg(&omega)
        .output()
        .unwrap();
    expect_success(&output, "overhead");
    let overhead: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert!(overhead["ratio"].as_f64().unwrap() > 1.0);

    // The baseline file must be untouched by all of the above.
    let theta_bytes = std::fs::read(&theta).unwrap();
    let output = bin()
        .args(["add-task", "--theta"])
        .arg(&theta)
        .args(["--task", "rotate90", "--variant", "simple", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("rot.mtmk"))
        .output()
        .unwrap();
    expect_success(&output, "second add-task");
    assert_eq!(theta_bytes, std::fs::read(&theta).unwrap());
}

#[test]
fn every_ablation_row_is_reachable_via_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config_bn = write_config(dir.path(), "config_bn.json", 11, true);
    let config_nobn = write_config(dir.path(), "config_nobn.json", 11, false);
    let theta = dir.path().join("theta.mtmk");
    pretrain(&config_bn, &theta);

    // (config, extra flags) per ablation row.
    let rows: Vec<(&Path, Vec<&str>)> = vec![
        (&config_nobn, vec!["--variant", "piggyback"]),
        (&config_bn, vec!["--variant", "piggyback"]),
        (&config_bn, vec!["--variant", "piggyback", "--learn-k", "1"]),
        (&config_bn, vec!["--variant", "simple", "--learn-k", "2"]),
        (&config_bn, vec!["--variant", "simple"]),
        (
            &config_bn,
            vec!["--variant", "simple", "--surrogate", "sigmoid"],
        ),
        (&config_bn, vec!["--variant", "full"]),
        (
            &config_bn,
            vec!["--variant", "full", "--surrogate", "sigmoid"],
        ),
        (&config_bn, vec!["--variant", "full", "--channel-wise"]),
    ];
    for (i, (config, flags)) in rows.iter().enumerate() {
        let out = dir.path().join(format!("row{i}.mtmk"));
        let output = bin()
            .args(["add-task", "--theta"])
            .arg(&theta)
            .args(["--task", "invert"])
            .args(flags)
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        expect_success(&output, &format!("ablation row {i} ({flags:?})"));
        assert!(out.exists());
    }
}

#[test]
fn invalid_flag_combination_fails_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "config.json", 13, true);
    let theta = dir.path().join("theta.mtmk");
    pretrain(&config, &theta);

    // Piggyback cannot learn k2.
    let output = bin()
        .args(["add-task", "--theta"])
        .arg(&theta)
        .args([
            "--task",
            "invert",
            "--variant",
            "piggyback",
            "--learn-k",
            "2",
            "--config",
        ])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("bad.mtmk"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    let line = stderr.lines().last().unwrap();
    let err: serde_json::Value =
        serde_json::from_str(line).expect("stderr ends with one JSON error line");
    assert!(err["error"].as_str().unwrap().contains("piggyback"));
}

#[test]
fn env_seed_override_controls_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "config.json", 17, true);
    let theta = dir.path().join("theta.mtmk");
    pretrain(&config, &theta);

    let run = |seed: &str, out: &str| {
        let out_path = dir.path().join(out);
        let output = bin()
            .env("MASKMOD_SEED", seed)
            .args(["add-task", "--theta"])
            .arg(&theta)
            .args(["--task", "invert", "--variant", "full", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out_path)
            .output()
            .unwrap();
        expect_success(&output, "add-task with MASKMOD_SEED");
        std::fs::read(out_path).unwrap()
    };
    let a = run("100", "a.mtmk");
    let b = run("100", "b.mtmk");
    let c = run("200", "c.mtmk");
    assert_eq!(a, b, "same seed must reproduce bytes");
    assert_ne!(a, c, "different seed must change the trained artifact");
}

#[test]
fn unknown_task_name_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "config.json", 19, true);
    let theta = dir.path().join("theta.mtmk");
    pretrain(&config, &theta);
    let output = bin()
        .args(["add-task", "--theta"])
        .arg(&theta)
        .args(["--task", "no_such_task", "--variant", "full", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("x.mtmk"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("no_such_task"));
}
