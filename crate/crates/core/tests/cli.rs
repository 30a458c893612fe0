use std::path::Path;
use std::process::{Command, Output};

use compact_bilinear::csv_io::load_features_csv;
use compact_bilinear::experiment::{evaluate, ExperimentMethod};
use compact_bilinear::model::Model;

fn cbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbp")).args(args).output().expect("cbp runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gen_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, model) = (dir.path().join("train.csv"), dir.path().join("test.csv"), dir.path().join("m.json"));
    let out = cbp(&["gen", "--seed", "3", "--n-train", "800", "--n-test", "200", "--train-out", s(&train), "--test-out", s(&test)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = cbp(&["train", "--data", s(&train), "--method", "compact", "--classes", "4", "--seed", "3", "--model", s(&model)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let out = cbp(&["eval", "--model", s(&model), "--data", s(&test)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = String::from_utf8(out.stdout).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("method,accuracy,acc_class_0,acc_class_1,acc_class_2,acc_class_3"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "compact");
    let accuracy: f64 = row[1].parse().unwrap();

    // The CLI report matches evaluating the saved model in-process.
    let loaded = Model::load(&model).unwrap();
    let data = load_features_csv(&test, Some(4)).unwrap();
    let confusion = evaluate(&loaded, &data).unwrap();
    let correct: usize = (0..4).map(|c| confusion[c][c]).sum();
    assert!((accuracy - correct as f64 / 200.0).abs() < 1e-12);
    assert!(accuracy > 0.6, "accuracy {accuracy}");
}

#[test]
fn eval_writes_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test, model) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("m.json"));
    let out_dir = dir.path().join("out");
    assert!(cbp(&["gen", "--n-train", "200", "--n-test", "50", "--train-out", s(&train), "--test-out", s(&test)]).status.success());
    assert!(cbp(&["train", "--data", s(&train), "--method", "sum", "--model", s(&model)]).status.success());
    let out = cbp(&["eval", "--model", s(&model), "--data", s(&test), "--out-dir", s(&out_dir)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(out_dir.join("report.csv").exists());
    let confusion = std::fs::read_to_string(out_dir.join("confusion_sum.csv")).unwrap();
    assert!(confusion.starts_with("true,pred_0,pred_1,pred_2,pred_3\n"));
}

#[test]
fn selftest_passes_and_catches_sign_flip() {
    let out = cbp(&["selftest", "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);

    let out = cbp(&["selftest", "--seed", "1", "--inject-sign-flip"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    let failed: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failed.len(), 1, "{text}");
    assert!(failed[0].contains("compact-vs-outer-product-oracle"));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "label,a0,a1,b0,b1\n0,1,2,3,4\n1,1,2,3\n").unwrap();
    let out = cbp(&["train", "--data", s(&data), "--method", "concat", "--model", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("bad.csv:3:"), "{err}");
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn unknown_method_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    std::fs::write(&data, "label,a0,b0\n0,1,2\n1,3,4\n").unwrap();
    let out = cbp(&["train", "--data", s(&data), "--method", "outer", "--model", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("usage error"), "{}", stderr(&out));

    let out = cbp(&["bench", "--seed", "1", "--methods", "concat,nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_requires_a_seed() {
    let out = cbp(&["bench", "--repeats", "1"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"));
}

#[test]
fn compact_tracks_full_bilinear_at_large_sketch() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = cbp(&[
        "bench", "--seed", "42", "--repeats", "3", "--sketch-dim", "1024", "--methods", "full,compact", "--out-dir", s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    let mean = |m: ExperimentMethod| -> f64 {
        let line = summary.lines().find(|l| l.starts_with(&format!("{},", m.token()))).unwrap();
        line.split(',').nth(1).unwrap().parse().unwrap()
    };
    let full = mean("full".parse().unwrap());
    let compact = mean("compact".parse().unwrap());
    assert!(full - compact <= 0.02, "full {full} compact {compact}");
}
