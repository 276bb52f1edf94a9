use std::path::Path;
use std::process::Command;

use volcount_cli::{RunManifest, RunStatus, Table};

fn volcount(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_volcount")).args(args).output().unwrap()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

const TINY: &str = r#"{
    "splits": {"train": 12, "val": 4, "test": 6},
    "training": {"max_epochs": 2},
    "baselines": {"forest": {"trees": 5}, "bow": {"dictionary_size": 6, "slices": 3}, "threshold_steps": 20},
    "learning_curve": {"sizes": [6, 10], "repetitions": 1},
    "repro": {"pairs": 4},
    "age": {"cohort": 60},
    "interpret": {"phantoms": 2, "occlusion": {"random_reps": 3}},
    "variants": [{"name": "base"}, {"name": "no_fc", "network": {"fc_layout": []}}]
}"#;

#[test]
fn malformed_config_exits_with_spec_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write(&cfg, r#"{"splits": {"train": "many"}}"#);
    let out = volcount(&["compare", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_spec_exits_with_spec_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, r#"{"learning_curve": {"repetitions": 0}}"#);
    let out = volcount(&["learning-curve", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_model_file_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, r#"{"models": ["/nonexistent/model"], "splits": {"train": 4, "val": 3, "test": 3}}"#);
    let run = dir.path().join("r");
    let out = volcount(&["score", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let m = manifest(&run);
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.error.unwrap().contains("model"));
}

#[test]
fn unknown_subcommand_is_rejected() {
    assert_eq!(volcount(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn generated_dataset_feeds_training_and_scoring() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, TINY);
    let data = dir.path().join("data");
    let out = volcount(&["generate", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap(), "--threads", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&data);
    assert_eq!(m.splits["all"].len(), 22);
    assert_eq!(m.outputs.len(), 22 * 3 + 1);

    let mut spec: serde_json::Value = serde_json::from_str(TINY).unwrap();
    spec["dataset"] = serde_json::json!(data);
    let cfg2 = dir.path().join("s2.json");
    write(&cfg2, &spec.to_string());
    let train = dir.path().join("train");
    let out = volcount(&["train", "--config", cfg2.to_str().unwrap(), "--out", train.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(train.join("models/cnn.tnsr").is_file());

    spec["models"] = serde_json::json!([train.join("models/cnn")]);
    write(&cfg2, &spec.to_string());
    let score = dir.path().join("score");
    let out = volcount(&["score", "--config", cfg2.to_str().unwrap(), "--out", score.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::read(&score.join("scores.csv")).unwrap();
    assert_eq!(t.header, vec!["id", "score_0"]);
    assert_eq!(t.rows.len(), 22);
    assert_eq!(t.rows[0][0], m.splits["all"][0]);
}

#[test]
fn compare_writes_five_methods_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, TINY);
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|r| {
            let out_dir = dir.path().join(r);
            let out = volcount(&["compare", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "5"]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            out_dir
        })
        .collect();
    let t = Table::read(&runs[0].join("metrics.csv")).unwrap();
    assert_eq!(t.header, vec!["method", "n", "pearson", "spearman", "icc", "mse"]);
    let names: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["cnn", "intensity", "volume", "components", "bow_forest"]);
    let w = Table::read(&runs[0].join("williams.csv")).unwrap();
    assert_eq!(w.rows.len(), 4);

    let (ma, mb) = (manifest(&runs[0]), manifest(&runs[1]));
    assert_eq!(ma.status, RunStatus::Complete);
    assert_eq!(ma.seeds["master"], 5);
    assert_eq!(ma.outputs, mb.outputs);
    for split in ["train", "val", "test"] {
        assert_eq!(ma.splits[split], mb.splits[split]);
    }
}

#[test]
fn learning_curve_with_one_repetition_has_no_ci_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, TINY);
    let run = dir.path().join("lc");
    let out = volcount(&["learning-curve", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::read(&run.join("metrics.csv")).unwrap();
    assert!(t.header.iter().all(|h| !h.contains("ci")));
    assert_eq!(t.rows.len(), 2);
    let m = manifest(&run);
    assert!(m.splits.contains_key("test"));
    assert!(m.splits.contains_key("lc_6_r0_train"));
}

#[test]
fn remaining_commands_run_on_a_tiny_spec() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.json");
    write(&cfg, TINY);
    for (cmd, file) in [
        ("repro", "repro_models.csv"),
        ("age", "age_bins.csv"),
        ("occlude", "occlusion_curves.csv"),
        ("saliency", "metrics.csv"),
        ("variants", "metrics.csv"),
    ] {
        let run = dir.path().join(cmd);
        let out = volcount(&[cmd, "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(run.join(file).is_file(), "{cmd}");
        assert_eq!(manifest(&run).status, RunStatus::Complete);
    }
    let v = Table::read(&dir.path().join("variants/metrics.csv")).unwrap();
    assert_eq!(v.rows.len(), 2);
    assert_eq!(v.rows[1][4], "0");
}
