use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn spade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spade"))
        .args(args)
        .env("SPADE_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Small, fast synthetic experiment.
fn config(dir: &Path) -> String {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{
  "data.config.n_normal": 200,
  "data.config.n_anomaly": 40,
  "train.max_epochs": 4,
  "seeds": [0, 1]
}"#,
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prepare_is_deterministic_and_records_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&spade(&["prepare", "--config", &cfg, "--out", s(&a)]));
    ok(&spade(&["prepare", "--config", &cfg, "--out", s(&b)]));
    for seed in ["seed-0", "seed-1"] {
        for f in ["labeled.csv", "unlabeled.csv", "test.csv", "manifest.json"] {
            assert_eq!(fs::read(a.join(seed).join(f)).unwrap(), fs::read(b.join(seed).join(f)).unwrap(), "{f}");
        }
    }
    let m = json(&a.join("seed-0/manifest.json"));
    assert_eq!(m["given_types"], serde_json::json!([1]));
    assert_eq!(m["fractions"]["label_frac"], 0.1);
    assert_eq!(m["config"]["train"]["max_epochs"], 4);
}

#[test]
fn missing_dataset_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.json");
    fs::write(
        &path,
        r#"{"data": {"source": "csv", "train": "/nonexistent/ann-train.data",
            "schema": {"class_column": "21", "delimiter": "whitespace", "has_header": false},
            "normal_classes": [3]}}"#,
    )
    .unwrap();
    let out = spade(&["prepare", "--config", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/ann-train.data"));
}

#[test]
fn train_then_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let scen = tmp.path().join("scen");
    ok(&spade(&["prepare", "--config", &cfg, "--out", s(&scen)]));
    let mut models = Vec::new();
    for seed in ["0", "1"] {
        let out = tmp.path().join(format!("model-{seed}"));
        let dir = scen.join(format!("seed-{seed}"));
        ok(&spade(&[
            "train", "--config", &cfg, "--scenario-dir", s(&dir), "--alpha", "0.25", "--out", s(&out),
        ]));
        let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
        let mut rows = csv::Reader::from_reader(trace.as_bytes());
        let header = rows.headers().unwrap().clone();
        let col = header.iter().position(|h| h == "alpha").unwrap();
        let first = rows.records().next().unwrap().unwrap();
        assert_eq!(&first[col], "0.25");
        assert!(out.join("pseudo_labels.jsonl").exists());
        models.push((out.join("model.json"), dir));
    }
    let rep = tmp.path().join("rep");
    let mut args = vec!["evaluate".to_string(), "--out".into(), s(&rep).into()];
    for (m, d) in &models {
        args.extend(["--model".into(), s(m).into(), "--scenario-dir".into(), s(d).into()]);
    }
    ok(&spade(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let r = json(&rep.join("report.json"));
    assert_eq!(r["n_seeds"], 2);
    assert!(r["overall_auc"]["mean"].is_number());
    assert!(r["given_auc"]["mean"].is_number());
    assert!(r["missed_auc"]["mean"].is_number());
    let auc = fs::read_to_string(rep.join("auc.csv")).unwrap();
    assert!(auc.lines().any(|l| l.starts_with("mean,")));
    assert!(auc.lines().any(|l| l.starts_with("std,")));
    assert!(rep.join("precision.csv").exists());
}

#[test]
fn occ_on_pu_scenario_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let scen = tmp.path().join("pu");
    ok(&spade(&["prepare", "--config", &cfg, "--scenario", "pu", "--seed", "0", "--out", s(&scen)]));
    let dir = scen.join("seed-0");
    let out = spade(&[
        "train", "--config", &cfg, "--scenario-dir", s(&dir), "--method", "occ", "--out", s(&tmp.path().join("m")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("labeled normals"));
    ok(&spade(&[
        "train", "--config", &cfg, "--scenario-dir", s(&dir), "--method", "negative-occ", "--out",
        s(&tmp.path().join("m2")),
    ]));
}

#[test]
fn single_class_test_set_fails_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train.csv");
    let test = tmp.path().join("test.csv");
    let mut t = String::from("x,y,class\n");
    for i in 0..60 {
        let v = i as f64 / 10.0;
        let class = if i % 6 == 0 { 1 } else { 0 };
        t += &format!("{},{},{class}\n", v.sin() + 4.0 * class as f64, v.cos());
    }
    fs::write(&train, t).unwrap();
    fs::write(&test, "x,y,class\n0.1,0.2,0\n0.3,0.1,0\n").unwrap();
    let path = tmp.path().join("config.json");
    fs::write(
        &path,
        format!(
            r#"{{"data": {{"source": "csv", "train": "{}", "test": "{}", "schema": {{"class_column": "class"}},
                "normal_classes": [0]}}, "scenario.label_frac": 0.3, "method": "occ", "seeds": [0]}}"#,
            s(&train),
            s(&test)
        ),
    )
    .unwrap();
    let out = spade(&["run", "--config", s(&path), "--out", s(&tmp.path().join("o"))]);
    assert!(!out.status.success());
}

#[test]
fn sweep_single_value_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let out = tmp.path().join("sw");
    ok(&spade(&["sweep", "--config", &cfg, "--param", "alpha", "--values", "1", "--out", s(&out)]));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    let out = tmp.path().join("ab");
    ok(&spade(&[
        "sweep", "--config", &cfg, "--seed", "0", "--param", "ablation", "--values", "full,no-ensemble", "--out", s(&out),
    ]));
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(text.contains("no-ensemble"));
}

#[test]
fn run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let out = tmp.path().join("run");
    ok(&spade(&["run", "--config", &cfg, "--no-ensemble", "--out", s(&out)]));
    for f in ["config.json", "report.json", "auc.csv", "seed-1/model.json", "seed-1/trace.csv", "seed-0/scenario/manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(json(&out.join("config.json"))["train"]["pseudo"]["k"], 1);
}
