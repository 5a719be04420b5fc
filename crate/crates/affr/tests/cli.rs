//! End-to-end tests of the `affr` binary: exit statuses, the full
//! synth/train/tune/eval/predict/report workflow, and the config-file
//! fallback layer.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn affr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affr"))
        .args(args)
        .output()
        .unwrap()
}

fn run_ok(args: &[&str]) -> String {
    let out = affr(args);
    assert!(
        out.status.success(),
        "affr {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec![
        "synth",
        "--seed",
        "3",
        "--tracks",
        "3",
        "--val-tracks",
        "2",
        "--frames",
        "150",
        "--dim",
        "8",
        "--task",
        "mtl",
    ];
    args.extend_from_slice(extra);
    args.push("--out");
    let out_str = out.to_str().unwrap().to_owned();
    args.push(&out_str);
    run_ok(&args);
    out
}

#[test]
fn usage_error_exits_2_and_runtime_error_exits_1() {
    let out = affr(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));

    let out = affr(&["train", "--task", "expr"]); // missing required flags
    assert_eq!(out.status.code(), Some(2));

    let out = affr(&[
        "eval",
        "--task",
        "expr",
        "--checkpoint",
        "/nonexistent/ck.txt",
        "--data",
        "/nonexistent",
        "--out",
        "/tmp/affr-nope",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn full_workflow_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &[]);
    assert!(data.join("train/features").is_dir());
    assert!(data.join("validation/annotations/au").is_dir());
    assert!(data.join("ground_truth.txt").is_file());
    assert!(fs::read_to_string(data.join("manifest.txt"))
        .unwrap()
        .contains("command = synth"));

    let run = dir.path().join("run");
    let stdout = run_ok(&[
        "train",
        "--task",
        "au",
        "--train-data",
        data.join("train").to_str().unwrap(),
        "--val-data",
        data.join("validation").to_str().unwrap(),
        "--epochs",
        "3",
        "--lr",
        "0.01",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert!(stdout.contains("best validation metric"));
    let checkpoint = run.join("checkpoint.txt");
    assert!(checkpoint.is_file());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,train_loss,val_metric,wall_secs"));

    let tuned = dir.path().join("tuned");
    run_ok(&[
        "tune-thresholds",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.join("validation").to_str().unwrap(),
        "--out",
        tuned.to_str().unwrap(),
    ]);
    let thresholds = tuned.join("thresholds.txt");
    assert_eq!(
        fs::read_to_string(&thresholds)
            .unwrap()
            .trim()
            .split(',')
            .count(),
        12
    );

    let evald = dir.path().join("eval");
    let stdout = run_ok(&[
        "eval",
        "--task",
        "au",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--data",
        data.join("validation").to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
        "--sweep-smoothing",
        "--out",
        evald.to_str().unwrap(),
    ]);
    assert!(stdout.contains("P_AU"));
    assert!(evald.join("report.kv").is_file());
    let sweep = fs::read_to_string(evald.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("smoothing,p_expr,p_au,ccc_v,ccc_a,p_va,p_mtl"));
    assert_eq!(sweep.lines().count(), 6); // header + 5 grid rows

    let pred = dir.path().join("pred");
    run_ok(&[
        "predict",
        "--task",
        "au",
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--features",
        data.join("validation/features").to_str().unwrap(),
        "--thresholds",
        thresholds.to_str().unwrap(),
        "--smooth",
        "mean,5",
        "--out",
        pred.to_str().unwrap(),
    ]);
    let files: Vec<_> = fs::read_dir(pred.join("predictions")).unwrap().collect();
    assert_eq!(files.len(), 2); // one per validation track

    let shown = run_ok(&[
        "report",
        "--report",
        evald.join("report.kv").to_str().unwrap(),
    ]);
    assert!(shown.contains("P_AU"));
}

#[test]
fn dropout_rate_shows_up_in_features() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), &["--dropout", "0.2"]);
    let mut total = 0usize;
    let mut undetected = 0usize;
    for entry in fs::read_dir(data.join("train/features")).unwrap() {
        let (_, frames) = affr::io::read_feature_file(&entry.unwrap().path()).unwrap();
        total += frames.len();
        undetected += frames.iter().filter(|f| !f.detected).count();
    }
    let rate = undetected as f64 / total as f64;
    assert!((rate - 0.2).abs() < 0.06, "undetected rate {rate}");
}

#[test]
fn config_file_fills_in_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("affr.conf");
    fs::write(&config, "frames = 60\ntracks = 2\n").unwrap();

    let out1 = dir.path().join("from-config");
    run_ok(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--task",
        "expr",
        "--out",
        out1.to_str().unwrap(),
    ]);
    let manifest = fs::read_to_string(out1.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.frames = 60"), "{manifest}");
    assert!(manifest.contains("config.tracks = 2"));

    let out2 = dir.path().join("flag-wins");
    run_ok(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--task",
        "expr",
        "--frames",
        "80",
        "--out",
        out2.to_str().unwrap(),
    ]);
    let manifest = fs::read_to_string(out2.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config.frames = 80"), "{manifest}");
}

#[test]
fn format_versions_flag_prints_and_exits_zero() {
    let out = affr(&["--format-versions", "report", "--report", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("feature-format"), "{stdout}");
}
