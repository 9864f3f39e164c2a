use std::path::Path;
use std::process::{Command, Output};

fn recourse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recourse")).args(args).output().expect("spawn recourse")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small dataset plus a quick config in `dir`.
fn setup(dir: &Path) {
    let out = recourse(&["synth-data", "--out", p(&dir.join("data")), "--n", "120", "--seed", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    std::fs::write(dir.join("cfg.json"), r#"{"epochs": 2, "batch_size": 32, "T": 2, "dropout": 0, "vanillacf": {"steps": 20}}"#).unwrap();
}

#[test]
fn synth_data_writes_one_csv_per_subset() {
    let dir = tempfile::tempdir().unwrap();
    let out = recourse(&["synth-data", "--out", p(&dir.path().join("d")), "--k", "4", "--n", "50", "--seed", "7"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut files: Vec<String> = std::fs::read_dir(dir.path().join("d"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["schema.json", "subset_0.csv", "subset_1.csv", "subset_2.csv", "subset_3.csv"]);
}

#[test]
fn single_subset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = recourse(&["synth-data", "--out", p(dir.path()), "--k", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flag_and_command_are_usage_errors() {
    assert_eq!(recourse(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(recourse(&["train", "--bogus"]).status.code(), Some(2));
}

#[test]
fn misspelled_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    std::fs::write(dir.path().join("bad.json"), r#"{"lamda2": 0.5}"#).unwrap();
    let out = recourse(&[
        "train",
        "--config",
        p(&dir.path().join("bad.json")),
        "--data",
        p(&dir.path().join("data")),
        "--out",
        p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lamda2"), "{}", stderr(&out));
}

#[test]
fn missing_label_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let schema = dir.path().join("data/schema.json");
    let text = std::fs::read_to_string(&schema).unwrap().replace("\"label\": \"y\"", "\"label\": \"approved\"");
    std::fs::write(&schema, text).unwrap();
    let out = recourse(&[
        "train",
        "--config",
        p(&dir.path().join("cfg.json")),
        "--data",
        p(&dir.path().join("data")),
        "--out",
        p(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("approved"), "{}", stderr(&out));
}

#[test]
fn predictor_only_checkpoint_has_no_generator_tensors() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let ckpt = dir.path().join("p.ckpt");
    let out = recourse(&[
        "train",
        "--config",
        p(&dir.path().join("cfg.json")),
        "--data",
        p(&dir.path().join("data")),
        "--mode",
        "predictor_only",
        "--out",
        p(&ckpt),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&ckpt).unwrap()).unwrap();
    assert_eq!(json["blocks"]["generator"].as_array().map(Vec::len), Some(0));
    assert!(!json["blocks"]["encoder"].as_array().unwrap().is_empty());

    let log = std::fs::read_to_string(dir.path().join("p.ckpt.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["L2"].is_null() && first["L3"].is_null());

    let attacked = recourse(&["attack", "--ckpt", p(&ckpt), "--data", p(&dir.path().join("data")), "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(attacked.status.code(), Some(2));
}

#[test]
fn evaluate_reports_every_method_with_k_from_the_data() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let report = dir.path().join("report.json");
    let out = recourse(&[
        "evaluate",
        "--config",
        p(&dir.path().join("cfg.json")),
        "--data",
        p(&dir.path().join("data")),
        "--methods",
        "rocoursenet,counternet,vanillacf",
        "--out",
        p(&report),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let reports = json.as_array().unwrap();
    let methods: Vec<&str> = reports.iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["rocoursenet", "counternet", "vanillacf"]);
    for r in reports {
        assert_eq!(r["k"], 3);
        assert_eq!(r["dataset"], "data");
        assert_eq!(r["per_subset"].as_array().unwrap().len(), 3);
        for key in ["validity", "robust_validity", "proximity", "accuracy", "stds"] {
            assert!(!r["aggregate"][key].is_null(), "aggregate lacks {key}");
        }
    }
}

#[test]
fn attack_sweep_rows_follow_the_grid_and_norm() {
    let dir = tempfile::tempdir().unwrap();
    setup(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    let data = dir.path().join("data");
    let cfg = dir.path().join("cfg.json");
    let out = recourse(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&ckpt)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let sweep = dir.path().join("sweep.csv");
    let out = recourse(&[
        "attack", "--ckpt", p(&ckpt), "--data", p(&data), "--config", p(&cfg), "--T-grid", "0,3", "--E-grid", "0.1,0.5", "--norm", "l2",
        "--out", p(&sweep),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&sweep).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "T,E,norm,robust_validity,proximity,seed");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(2) == Some("l2")));
    // T = 0 leaves the model alone, so both radii agree
    assert_eq!(lines[1].split(',').nth(3), lines[2].split(',').nth(3));

    // a different split seed re-fits the encoding, which the checkpoint rejects
    std::fs::write(dir.path().join("other.json"), r#"{"test_fraction": 0.5}"#).unwrap();
    let out = recourse(&["attack", "--ckpt", p(&ckpt), "--data", p(&data), "--config", p(&dir.path().join("other.json")), "--out", p(&sweep)]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
}
