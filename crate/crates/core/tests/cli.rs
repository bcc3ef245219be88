use std::path::Path;
use std::process::{Command, Output};

fn lfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = r#"{
  "train": {
    "projectors": 3,
    "candidates": 12,
    "latent_dim": 8,
    "encoder_hidden": [16],
    "projector_hidden": [8],
    "batch_size": 32,
    "train_epochs": 2,
    "seed": 5
  },
  "dataset": { "kind": "synthetic", "n": 200, "d_signal": 4, "d_noise": 2, "classes": 3, "sep": 3.0 },
  "probe": { "seeds": 2, "max_iters": 200 },
  "output_dir": "run"
}"#;

#[test]
fn pretrain_writes_artifacts_and_probe_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = lfr(&["pretrain", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for name in ["checkpoint.lfr", "config.json", "train_log.tsv", "selection.json"] {
        assert!(run.join(name).is_file(), "{name} missing");
    }
    let log = std::fs::read_to_string(run.join("train_log.tsv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch\tencoder_loss\tpredictor_loss\tseconds"));

    let ckpt = run.join("checkpoint.lfr");
    for (encoder, file) in [
        ("lfr", "eval_lfr.json"),
        ("random-init", "eval_random_init.json"),
        ("raw", "eval_raw.json"),
    ] {
        let out = lfr(&[
            "probe",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--config",
            &cfg,
            "--encoder",
            encoder,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("over 2 seed(s)"));
        let report: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join(file)).unwrap()).unwrap();
        assert_eq!(report["runs"].as_array().unwrap().len(), 2);
        let acc = report["mean_accuracy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let a = dir.path().join("a");
    assert!(
        lfr(&["pretrain", "--config", &cfg, "--output-dir", a.to_str().unwrap()])
            .status
            .success()
    );
    // The written config has every default filled in and absolute paths.
    let effective = a.join("config.json");
    let b = dir.path().join("b");
    let out = lfr(&[
        "pretrain",
        "--config",
        effective.to_str().unwrap(),
        "--output-dir",
        b.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(a.join("checkpoint.lfr")).unwrap();
    let second = std::fs::read(b.join("checkpoint.lfr")).unwrap();
    assert!(first == second, "checkpoints differ");
}

#[test]
fn seed_flag_changes_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(
        lfr(&["pretrain", "--config", &cfg, "--output-dir", a.to_str().unwrap()])
            .status
            .success()
    );
    assert!(lfr(&[
        "pretrain",
        "--config",
        &cfg,
        "--output-dir",
        b.to_str().unwrap(),
        "--seed",
        "6"
    ])
    .status
    .success());
    assert_ne!(
        std::fs::read(a.join("checkpoint.lfr")).unwrap(),
        std::fs::read(b.join("checkpoint.lfr")).unwrap()
    );
}

#[test]
fn select_debug_reports_exhaustive_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let json = dir.path().join("select.json");
    let out = lfr(&["select-debug", "--config", &cfg, "--output", json.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .find(|l| l.starts_with("greedy==exhaustive: "))
        .expect("comparison line");
    assert!(line.ends_with("true") || line.ends_with("false"), "{line}");
    assert!(text.contains("log_det: "));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    assert_eq!(report["selection"]["chosen_indices"].as_array().unwrap().len(), 3);

    let out = lfr(&[
        "select-debug",
        "--config",
        &cfg,
        "--candidates",
        "200",
        "--projectors",
        "6",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("greedy==exhaustive: skipped"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let unknown_key = write_config(dir.path(), "bad.json", r#"{"train": {"learning_rate": 0.1}}"#);
    let out = lfr(&["pretrain", "--config", &unknown_key]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let invalid = write_config(
        dir.path(),
        "invalid.json",
        r#"{"train": {"batch_size": 1, "projectors": 0}}"#,
    );
    assert_eq!(lfr(&["pretrain", "--config", &invalid]).status.code(), Some(1));

    assert_eq!(lfr(&["pretrain", "--bogus"]).status.code(), Some(1));

    let missing = write_config(
        dir.path(),
        "missing.json",
        r#"{"dataset": {"kind": "adult", "dir": "no_such_dir"}, "output_dir": "out"}"#,
    );
    let out = lfr(&["pretrain", "--config", &missing]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let corrupt = dir.path().join("corrupt.lfr");
    std::fs::write(&corrupt, b"not a checkpoint").unwrap();
    let cfg = write_config(dir.path(), "small.json", SMALL);
    let out = lfr(&["probe", "--checkpoint", corrupt.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));

    let diverging = SMALL.replace(r#""seed": 5"#, r#""seed": 5, "optimizer": {"kind": "sgd", "lr": 1e30}"#);
    let nan = write_config(dir.path(), "nan.json", &diverging);
    let out = lfr(&["pretrain", "--config", &nan]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn defaults_prints_a_loadable_config() {
    let out = lfr(&["defaults"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "defaults.json", &String::from_utf8_lossy(&out.stdout));
    let parsed: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(parsed["train"]["projectors"], 6);
    assert_eq!(parsed["train"]["candidates"], 60);
}
