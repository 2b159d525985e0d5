//! Binary-level checks: exit codes, the error channel, and manifest replay.
//! Replays must be bitwise identical outside wall-time fields.

mod common;

use std::path::Path;

use common::{assert_bitwise_equal, assert_equal_masking_wall, minivp, run_ok, write_json};
use minivp_cli::config::{GenDataConfig, ProbesCommandConfig, TrainCommandConfig};
use minivp_core::data::{default_spec, DataKind};
use minivp_core::metrics::ProbeTrainConfig;
use minivp_core::models::{ModelConfig, ModelKind};
use minivp_core::objective::TrainConfig;

fn tiny_gen_config(dir: &Path, seed: u64) -> std::path::PathBuf {
    let mut cfg = GenDataConfig {
        spec: default_spec(DataKind::BounceStoch, seed),
        test_count: 3,
    };
    cfg.spec.count = 4;
    cfg.spec.t = 16;
    let path = dir.join("gen.json");
    write_json(&path, &serde_json::to_value(&cfg).unwrap());
    path
}

fn tiny_train_config(dir: &Path, dataset: &Path) -> std::path::PathBuf {
    let cfg = TrainCommandConfig {
        dataset: dataset.to_path_buf(),
        model: ModelConfig {
            kind: ModelKind::Svg,
            z_dim: 4,
            context_len: 2,
            predict_len: 3,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            batch: 2,
            steps: 3,
            eval_every: 2,
            seed: 5,
            ..TrainConfig::default()
        },
    };
    let path = dir.join("train.json");
    write_json(&path, &serde_json::to_value(&cfg).unwrap());
    path
}

#[test]
fn help_exits_zero() {
    let out = minivp(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));
}

#[test]
fn missing_config_fails_on_stderr() {
    let out = minivp(&["train", "--config", "/nonexistent.json", "--out", "/tmp/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn mismatched_manifest_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tiny_gen_config(tmp.path(), 11);
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        gen.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    let manifest = data.join("manifest.json");
    let out = minivp(&[
        "train",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gen-data"), "stderr: {err}");
}

#[test]
fn gen_data_replays_bitwise_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tiny_gen_config(tmp.path(), 11);
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    run_ok(&[
        "gen-data",
        "--config",
        gen.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
    ]);
    run_ok(&[
        "gen-data",
        "--config",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    for f in ["train.mvpt", "test.mvpt", "train.json", "manifest.json"] {
        assert_bitwise_equal(&a.join(f), &b.join(f));
    }

    // A seed override must change the data, and must land in the manifest.
    run_ok(&[
        "gen-data",
        "--config",
        a.join("manifest.json").to_str().unwrap(),
        "--out",
        c.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_ne!(
        std::fs::read(a.join("train.mvpt")).unwrap(),
        std::fs::read(c.join("train.mvpt")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(c.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn pipeline_replays_bitwise_from_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let gen = tiny_gen_config(tmp.path(), 23);
    let data = tmp.path().join("data");
    run_ok(&[
        "gen-data",
        "--config",
        gen.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);

    let probes_cfg = ProbesCommandConfig {
        dataset: data.clone(),
        train: ProbeTrainConfig {
            frame_steps: 1,
            video_steps: 1,
            batch: 2,
            min_accuracy: 0.0,
            holdout_frames: 4,
            holdout_clips: 2,
            ..ProbeTrainConfig::default()
        },
        seed: 1,
    };
    let probes_json = tmp.path().join("probes.json");
    write_json(&probes_json, &serde_json::to_value(&probes_cfg).unwrap());
    let probes = tmp.path().join("probes");
    run_ok(&[
        "train-probes",
        "--config",
        probes_json.to_str().unwrap(),
        "--out",
        probes.to_str().unwrap(),
    ]);

    let train_json = tiny_train_config(tmp.path(), &data);
    let (run_a, run_b) = (tmp.path().join("run-a"), tmp.path().join("run-b"));
    for run in [&run_a, &run_b] {
        run_ok(&[
            "train",
            "--config",
            train_json.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ]);
    }
    assert_bitwise_equal(&run_a.join("model.mvpt"), &run_b.join("model.mvpt"));
    assert_equal_masking_wall(&run_a.join("loss.csv"), &run_b.join("loss.csv"));

    let eval_cfg = serde_json::json!({
        "dataset": data,
        "model": run_a.join("model.mvpt"),
        "probes": probes.join("probes.mvpt"),
        "samples": 3,
        "horizon": 6,
        "eval_videos": 2,
        "seed": 7,
    });
    let eval_json = tmp.path().join("eval.json");
    write_json(&eval_json, &eval_cfg);
    let (ev_a, ev_b) = (tmp.path().join("ev-a"), tmp.path().join("ev-b"));
    run_ok(&[
        "eval",
        "--config",
        eval_json.to_str().unwrap(),
        "--out",
        ev_a.to_str().unwrap(),
    ]);
    run_ok(&[
        "eval",
        "--config",
        ev_a.join("manifest.json").to_str().unwrap(),
        "--out",
        ev_b.to_str().unwrap(),
    ]);
    for f in ["report.json", "baseline.json", "curves.csv", "manifest.json"] {
        assert_bitwise_equal(&ev_a.join(f), &ev_b.join(f));
    }
    assert_equal_masking_wall(&ev_a.join("summary.csv"), &ev_b.join("summary.csv"));
}
