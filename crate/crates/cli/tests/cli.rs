//! End-to-end tests of the `salpn` binary.

use std::path::Path;
use std::process::{Command, Output};

fn salpn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_salpn"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_desk_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let config = serde_json::json!({
        "alpha": 7.0,
        "map_size": 64,
        "image_size": 64,
        "channels": 12,
        "d_mid": 8,
        "h_drone_min": 40.0,
        "h_drone_max": 370.0,
        "lambda_aug": 5.9,
        "train": {
            "lr_backbone": 1e-4,
            "lr_heads": 0.02,
            "momentum": 0.9,
            "weight_decay": 5e-4,
            "batch_size": 8,
            "epochs": 4,
            "lr_decay_epoch": 3,
            "lr_decay_factor": 0.1,
            "horizontal_flip": true
        }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn plan_prints_reference_geometry() {
    let out = salpn(&["plan", "--h-drone", "256"], &[]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["theta"], 5);
    let sides: Vec<u64> = report["drone"]["parts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["side"].as_u64().unwrap())
        .collect();
    assert_eq!(sides, vec![22, 54, 86, 118]);
    let sat_sides: Vec<u64> = report["satellite"]["parts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["side"].as_u64().unwrap())
        .collect();
    assert_eq!(sat_sides, vec![32, 64, 96, 128]);
}

#[test]
fn inadmissible_alpha_fails_citing_both_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"alpha": 17.0}"#).unwrap();
    let out = salpn(&["--config", config.to_str().unwrap(), "plan", "--h-drone", "256"], &[]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("16.62"), "{stderr}");
    assert!(stderr.contains("53.19"), "{stderr}");
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_desk_config(dir.path());
    let data = dir.path().join("data");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--classes",
            "4",
            "--heights",
            "94.875,189.75,303.6",
        ],
        &[],
    );
    assert!(out.status.success(), "synth: {}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("train.jsonl").exists());

    let ckpt = dir.path().join("model.slpc");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "train",
            "--dataset",
            data.to_str().unwrap(),
            "--out",
            ckpt.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt.exists());

    let report_path = dir.path().join("metrics.json");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "eval",
            "--dataset",
            data.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--k",
            "1,5",
            "--out",
            report_path.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["map"].is_number());
    assert!(report["recalls"]["1"].is_number());
}

#[test]
fn pipeline_writes_report_plot_and_honors_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_desk_config(dir.path());
    let data = dir.path().join("data");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--classes",
            "4",
            "--heights",
            "94.875,303.6",
        ],
        &[],
    );
    assert!(out.status.success());

    let report_path = dir.path().join("report.json");
    let plot_path = dir.path().join("curve.svg");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "pipeline",
            "--dataset",
            data.to_str().unwrap(),
            "--delta-ps",
            "-4,0,4",
            "--out",
            report_path.to_str().unwrap(),
            "--plot",
            plot_path.to_str().unwrap(),
        ],
        &[("SALPN_SEED", "99")],
    );
    assert!(out.status.success(), "pipeline: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["seed"], 99);
    assert_eq!(report["per_delta_p"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(&plot_path).unwrap().starts_with("<svg"));
}

#[test]
fn augment_and_sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_desk_config(dir.path());
    let data = dir.path().join("data");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--classes",
            "4",
            "--heights",
            "189.75",
        ],
        &[],
    );
    assert!(out.status.success());

    let aug = dir.path().join("aug");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "augment",
            "--dataset",
            data.to_str().unwrap(),
            "--delta-p",
            "-6",
            "--out",
            aug.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "augment: {}", String::from_utf8_lossy(&out.stderr));
    assert!(aug.join("augment_manifest.json").exists());
    assert!(aug.join("test.jsonl").exists());

    let csv_path = dir.path().join("sweep.csv");
    let out = salpn(
        &[
            "--config",
            config.to_str().unwrap(),
            "sweep-alpha",
            "--dataset",
            data.to_str().unwrap(),
            "--alphas",
            "0,7",
            "--delta-ps",
            "0,4",
            "--out",
            csv_path.to_str().unwrap(),
        ],
        &[],
    );
    assert!(out.status.success(), "sweep: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("alpha,dp_0,dp_4"));
}
