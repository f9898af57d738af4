use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mgtad::data::load_annotations;
use mgtad::detection::load_predictions;

fn mgtad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgtad"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run mgtad")
}

fn ok(args: &[&str]) -> String {
    let out = mgtad(args);
    assert!(
        out.status.success(),
        "mgtad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let data = d.join("data");
    let spec = d.join("spec.json");
    fs::write(
        &spec,
        r#"{"videos": 6, "steps_range": [64, 128], "zipf_exponent": 1.5, "instances_per_video": [2, 4]}"#,
    )
    .unwrap();
    ok(&["synth", "--spec", s(&spec), "--seed", "3", "--out", s(&data)]);
    let gt = data.join("gt.jsonl");
    assert_eq!(load_annotations(&gt).unwrap().len(), 6);

    let stats = ok(&["stats", "--gt", s(&gt), "--num-classes", "5", "--svg", s(&d.join("hist.svg"))]);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["videos"], 6);
    assert!(fs::read_to_string(d.join("hist.svg")).unwrap().starts_with("<svg"));

    let aug = d.join("aug.jsonl");
    let plan = d.join("plan.json");
    ok(&["augment", "--alpha", "8", "--in", s(&gt), "--out", s(&aug), "--plan", s(&plan), "--num-classes", "5"]);
    let before: usize = load_annotations(&gt).unwrap().iter().map(|a| a.instances.len()).sum();
    let after: usize = load_annotations(&aug).unwrap().iter().map(|a| a.instances.len()).sum();
    assert!(after >= before);
    assert!(fs::read_to_string(&plan).unwrap().contains("categories"));

    let cfg = d.join("train.json");
    fs::write(
        &cfg,
        r#"{"model": {"encoder": {"channels": 8, "num_levels": 3}, "head": {"num_classes": 5}},
            "train": {"epochs": 2, "batch_size": 4, "crop_length": 32}}"#,
    )
    .unwrap();
    let model = d.join("model.mgp");
    let trace = d.join("trace.json");
    ok(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--gt", s(&aug), "--out", s(&model), "--trace", s(&trace),
    ]);
    let trace: serde_json::Value = serde_json::from_str(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(trace.as_array().unwrap().len(), 2);

    let infer = d.join("infer.json");
    fs::write(&infer, r#"{"score_threshold": 0.005, "report_threshold": 0.0, "window": 64}"#).unwrap();
    let offline = d.join("preds.jsonl");
    let streamed = d.join("stream.jsonl");
    let feats = data.join("features");
    ok(&["detect", "--model", s(&model), "--features", s(&feats), "--out", s(&offline), "--config", s(&infer)]);
    ok(&[
        "detect", "--model", s(&model), "--features", s(&feats), "--out", s(&streamed), "--config", s(&infer),
        "--stream",
    ]);
    let a = load_predictions(&offline).unwrap();
    let b = load_predictions(&streamed).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());

    let report = d.join("eval.json");
    let line = ok(&["eval", "--preds", s(&offline), "--gt", s(&gt), "--out", s(&report)]);
    assert!(line.contains("F1"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["tiou_threshold"], 0.5);

    let diag = d.join("diag.json");
    let svg = d.join("svg");
    ok(&["diagnose", "--preds", s(&offline), "--gt", s(&gt), "--out", s(&diag), "--svg", s(&svg)]);
    let diag: serde_json::Value = serde_json::from_str(&fs::read_to_string(&diag).unwrap()).unwrap();
    assert_eq!(diag["fp_budgets"].as_array().unwrap().len(), 10);
    assert!(fs::read_dir(&svg).unwrap().count() >= 3);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.mgp");
    fs::write(&bad, b"XXXX").unwrap();
    let out = mgtad(&[
        "detect", "--model", s(&bad), "--features", s(tmp.path()), "--out", s(&tmp.path().join("p.jsonl")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("magic"), "{err}");

    let missing = tmp.path().join("none.jsonl");
    let out = mgtad(&["eval", "--preds", s(&missing), "--gt", s(&missing)]);
    assert!(!out.status.success());
}
