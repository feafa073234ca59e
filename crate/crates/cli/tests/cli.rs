use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn auglstm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_auglstm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path, out: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(out).join("manifest.json")).expect("manifest written");
    serde_json::from_str(&text).unwrap()
}

/// Rows of a CSV file, checking every row has the header's width.
fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<String>> = text.lines().map(|l| l.split(',').map(String::from).collect()).collect();
    assert!(rows.iter().all(|r| r.len() == rows[0].len()), "ragged CSV {}", path.display());
    rows
}

const SMALL: &[&str] = &["--hidden-size", "6", "--embed-dim", "6", "--classes", "3"];

/// 32 training and 16 validation examples in `data/`.
fn with_data() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = auglstm(
        dir.path(),
        &["gen-data", "--n-train", "32", "--n-valid", "16", "--classes", "3", "--vocab-size", "20", "--out", "data"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn train_small(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", "sst_baseline", "--train", "data/train.tsv", "--valid", "data/valid.tsv", "--out", out];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    auglstm(dir, &args)
}

#[test]
fn param_count_matches_known_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let o = auglstm(dir.path(), &["param-count", "--config", "sst_baseline"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).trim(), "553015 (0.553M)");
    let o = auglstm(dir.path(), &["param-count", "--config", "sst_large"]);
    assert_eq!(stdout(&o).trim(), "8650405 (8.650M)");
    assert_eq!(manifest(dir.path(), "out")["status"], "ok");
    let o = auglstm(dir.path(), &["param-count", "--layers", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.num_layers"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = auglstm(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = auglstm(dir.path(), &["train", "--model.no_such_key", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.no_such_key"));
}

#[test]
fn train_one_epoch_writes_outputs_and_records_overrides() {
    let dir = with_data();
    let o = train_small(dir.path(), "run", &["--epochs", "1", "--layers", "2", "--model.forget_bias", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("run/metrics.csv"));
    assert_eq!(rows[0], ["epoch", "train_loss", "train_acc", "valid_acc"]);
    assert_eq!(rows.len(), 2);
    let m = manifest(dir.path(), "run");
    assert_eq!(m["config"]["model"]["hidden_size"], 6);
    assert_eq!(m["config"]["model"]["num_layers"], 2);
    assert_eq!(m["config"]["model"]["forget_bias"], 1.0);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert!(m["inputs"][0]["sha256"].as_str().unwrap().len() == 64);
    let outputs: Vec<PathBuf> = serde_json::from_value(m["outputs"].clone()).unwrap();
    assert!(outputs.iter().all(|p| dir.path().join(p).exists()));
}

#[test]
fn rerunning_from_a_manifest_is_bitwise_identical() {
    let dir = with_data();
    assert!(train_small(dir.path(), "a", &["--epochs", "2", "--keep-prob", "0.5", "--lr", "0.01"]).status.success());
    let o = auglstm(dir.path(), &["train", "--config", "a/manifest.json", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["checkpoint.bin", "metrics.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn resume_continues_a_run() {
    let dir = with_data();
    assert!(train_small(dir.path(), "full", &["--epochs", "3", "--keep-prob", "0.5"]).status.success());
    assert!(train_small(dir.path(), "part", &["--epochs", "1", "--keep-prob", "0.5"]).status.success());
    let o = train_small(dir.path(), "part", &["--epochs", "3", "--keep-prob", "0.5", "--resume", "part/checkpoint.bin"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("full/checkpoint.bin")).unwrap();
    let b = std::fs::read(dir.path().join("part/checkpoint.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mc_curve_shapes_and_errors() {
    let dir = with_data();
    assert!(train_small(dir.path(), "run", &["--epochs", "1", "--keep-prob", "0.5"]).status.success());
    let base = ["mc-curve", "--checkpoint", "run/checkpoint.bin", "--data", "data/valid.tsv"];

    let o = auglstm(dir.path(), &[&base[..], &["--out", "c1"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("c1/curve.csv"));
    assert_eq!(rows[0], ["p", "mean_acc", "ci_low", "ci_high", "baseline_acc"]);
    let ps: Vec<usize> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ps, (1..=100).map(|i| 2 * i).collect::<Vec<_>>());

    let o = auglstm(dir.path(), &[&base[..], &["--p-max", "10", "--p-step", "2", "--strategy", "prob-mean", "--out", "c2"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(csv_rows(&dir.path().join("c2/curve.csv")).len(), 6);
    assert_eq!(manifest(dir.path(), "c2")["config"]["mc"]["strategy"], "prob-mean");

    let o = auglstm(dir.path(), &["mc-curve", "--checkpoint", "missing.bin", "--data", "data/valid.tsv", "--out", "c3"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(manifest(dir.path(), "c3")["status"], "failed");

    let o = auglstm(dir.path(), &[&base[..], &["--k", "10", "--out", "c4"]].concat());
    assert_eq!(o.status.code(), Some(2), "p beyond k must be rejected");

    let o = auglstm(dir.path(), &["eval", "--checkpoint", "run/checkpoint.bin", "--data", "data/valid.tsv", "--out", "e"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("accuracy"));
}

#[test]
fn ladder_with_one_run_collapses_quartiles() {
    let dir = with_data();
    let o = auglstm(
        dir.path(),
        &[
            "ladder", "--runs", "1", "--epochs", "1", "--hidden-size", "5", "--embed-dim", "5", "--classes", "3",
            "--model.pooling_dim", "4", "--suite.large_hidden", "7", "--mc.eval_samples", "4",
            "--train", "data/train.tsv", "--valid", "data/valid.tsv", "--out", "lad",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lad/summary.json")).unwrap()).unwrap();
    let rungs = summary["rungs"].as_array().unwrap();
    assert_eq!(rungs.len(), 9);
    for r in rungs {
        let v = &r["median"];
        for k in ["q1", "q3", "min", "max", "mean"] {
            assert_eq!(&r[k], v, "{k}");
        }
    }
    let rows = csv_rows(&dir.path().join("lad/runs.csv"));
    assert_eq!(rows[0], ["rung", "run", "epoch", "train_loss", "valid_acc"]);
    assert_eq!(rows.len(), 1 + 9);
}

#[test]
fn ladder_structure_violation_exits_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let rung = |name: &str, hidden: usize, pooling: bool| {
        serde_json::json!({
            "name": name,
            "config": {"num_layers": 1, "hidden_size": hidden, "num_classes": 2, "embed_dim": 4, "pooling": pooling},
            "inference": {"kind": "standard"}
        })
    };
    let ladder = serde_json::json!({"rungs": [rung("a", 4, false), rung("b", 8, true)]});
    std::fs::write(dir.path().join("ladder.json"), ladder.to_string()).unwrap();
    // The training file does not exist: reaching the data stage would fail differently.
    let o = auglstm(dir.path(), &["ladder", "--ladder", "ladder.json", "--train", "absent.tsv", "--out", "l"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("suite.ladder"), "{}", stderr(&o));
    assert!(!dir.path().join("l/runs.csv").exists());
}

#[test]
fn depth_suite_reports_every_cell() {
    let dir = with_data();
    let o = auglstm(
        dir.path(),
        &[
            "depth", "--embed-dim", "8", "--budget", "3020", "--depths", "1,2",
            "--modes", "none,res-v2", "--runs", "2", "--epochs", "1",
            "--train", "data/train.tsv", "--valid", "data/valid.tsv", "--out", "d",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("d/depth.csv"));
    assert_eq!(rows.len(), 1 + 4);
    let o = auglstm(dir.path(), &["depth", "--embed-dim", "8", "--budget", "300", "--depths", "1,8", "--out", "d2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nearest"), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = with_data();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let o = train_small(dir.path(), "blocker/run", &["--epochs", "1"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
