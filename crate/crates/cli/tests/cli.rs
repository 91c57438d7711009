mod common;

use std::fs;
use std::path::Path;

use common::{fixture, run, run_with_stdin, s, stderr, stdout, tiny_config};
use serde_json::{json, Value};

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Trains the tiny model on the fixture and returns the run directory.
fn trained(dir: &Path, extra: Value) -> std::path::PathBuf {
    let cfg = tiny_config(dir, extra);
    let out = dir.join("run");
    let res = run(&["train", "--config", s(&cfg), "--train", s(&fixture("train.jsonl")), "--val", s(&fixture("dev.jsonl")), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    out
}

#[test]
fn missing_corpus_is_an_io_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.jsonl");
    let res = run(&["train", "--preset", "semeval-gcn", "--train", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr(&res).contains(s(&missing)), "{}", stderr(&res));
}

#[test]
fn mu_one_keeps_only_self_loops() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let res = run(&["build-graph", "--preset", "semeval-gcn", "--mu", "1.0", "--train", s(&fixture("train.jsonl")), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let graph = read_json(&out.join("graph.json"));
    let matrix = |key: &str| -> Vec<Vec<f64>> { serde_json::from_value(graph[key].clone()).unwrap() };
    let (g1, g2, g, g_tilde) = (matrix("g1"), matrix("g2"), matrix("g"), matrix("g_tilde"));
    assert_eq!(g.len(), 11);
    for i in 0..11 {
        for j in (0..11).filter(|&j| j != i) {
            assert!(g1[i][j] < 1.0, "fixture has a perfectly co-occurring pair");
            assert_eq!(g2[i][j], 0.0);
            assert_eq!(g[i][j], 0.0);
        }
        assert_eq!(g[i][i], 1.0 - 0.35);
        assert!((g_tilde[i][i] - 1.0).abs() < 1e-15);
    }
    assert!(!fs::read_to_string(out.join("graph.dot")).unwrap().contains("->"));
}

#[test]
fn export_dot_reproduces_build_graph_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let res = run(&["build-graph", "--preset", "semeval-gcn", "--train", s(&fixture("train.jsonl")), "--out", s(&out)]);
    assert!(res.status.success());
    let res = run(&["export-dot", "--graph", s(&out.join("graph.json"))]);
    assert!(res.status.success());
    assert_eq!(stdout(&res), fs::read_to_string(out.join("graph.dot")).unwrap());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "build-graph");
    assert_eq!(manifest["config"]["graph"]["mu"], 0.4);
}

#[test]
fn unknown_config_field_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({ "optim": { "learning_rate": 0.1 } }));
    let out = dir.path().join("run");
    let res = run(&["train", "--config", s(&cfg), "--train", s(&fixture("train.jsonl")), "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("learning_rate"), "{}", stderr(&res));
    assert!(!out.join("model.ckpt").exists());
}

#[test]
fn out_of_domain_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let train = fixture("train.jsonl");
    for args in [["--mu", "1.5"], ["--w", "1.0"], ["--threshold", "-0.1"]] {
        let mut argv = vec!["train", "--preset", "semeval-gcn", "--train", s(&train), "--out", s(dir.path())];
        argv.extend(args);
        assert_eq!(run(&argv).status.code(), Some(1), "{args:?}");
    }
    let res = run(&["train", "--preset", "reference-trs-twitter", "--train", s(&train), "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    let res = run(&["train", "--preset", "no-such-preset", "--train", s(&train)]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", "--param", "mu"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn training_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = trained(dir.path(), json!({}));
    for name in ["model.ckpt", "train_log.jsonl", "graph.json", "graph.dot", "report.json", "manifest.json"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let rows: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0]["epoch"], 1);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["config"]["optim"]["epochs"], 4);
    assert_eq!(manifest["config"]["model"]["encoder"]["kind"], "meanpool");
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({
        "model": { "encoder": { "kind": "selfattn", "heads": 2, "depth": 1 } },
        "optim": { "lr_head": 1e300, "lr_encoder": 1e300, "clip_norm": null }
    }));
    let res = run(&["train", "--config", s(&cfg), "--train", s(&fixture("train.jsonl")), "--out", s(&dir.path().join("run"))]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr(&res));
    assert!(stderr(&res).contains("diverged"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), json!({}));
    let out = dir.path().join("sweep");
    let res = run(&[
        "sweep", "--config", s(&cfg), "--train", s(&fixture("train.jsonl")), "--param", "w", "--values", "0,0.35,0.7",
        "--jobs", "2", "--out", s(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let mut reader = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["value", "accuracy", "micro_f1", "macro_f1", "error"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for (row, want) in rows.iter().zip([0.0, 0.35, 0.7]) {
        assert_eq!(row[0].parse::<f64>().unwrap(), want);
        let acc: f64 = row[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(row[4].is_empty());
    }
    assert!(out.join("w-0").join("model.ckpt").is_file());
    assert_eq!(read_json(&out.join("manifest.json"))["config"]["sweep"]["param"], "w");
}

#[test]
fn sweep_rejects_a_single_value() {
    let dir = tempfile::tempdir().unwrap();
    let res = run(&["sweep", "--preset", "semeval-gcn", "--train", s(&fixture("train.jsonl")), "--param", "mu", "--values", "0.3", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn predict_is_deterministic_and_flags_empty_texts() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), json!({})).join("model.ckpt");
    let args = ["predict", "--checkpoint", s(&ckpt), "--text", "angera disgustb fq", "--text", " \t ", "--text", "joyc!"];
    let first = run(&args);
    assert!(first.status.success(), "{}", stderr(&first));
    let lines: Vec<Value> = stdout(&first).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for line in [&lines[0], &lines[2]] {
        let probs = line["probabilities"].as_object().unwrap();
        assert_eq!(probs.len(), 11);
        for label in line["labels"].as_array().unwrap() {
            assert!(probs[label.as_str().unwrap()].as_f64().unwrap() >= 0.5);
        }
    }
    assert_eq!(lines[1]["error"], "empty after preprocessing");
    assert_eq!(stdout(&run(&args)), stdout(&first));

    let piped = run_with_stdin(&["predict", "--checkpoint", s(&ckpt), "--input", "-"], Some("angera disgustb fq\n\njoyc!\n"));
    let piped = stdout(&piped);
    let piped: Vec<&str> = piped.lines().collect();
    let direct = stdout(&first);
    let direct: Vec<&str> = direct.lines().collect();
    assert_eq!(piped.len(), 3);
    assert_eq!(piped[0], direct[0]);
    assert_eq!(piped[1], direct[1]);
    assert_eq!(piped[2], direct[2]);
}

#[test]
fn eval_reports_on_an_unseen_split() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), json!({})).join("model.ckpt");
    let out = dir.path().join("eval");
    let res = run(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&fixture("test.jsonl")), "--out", s(&out)]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["n_examples"], 60);
    assert_eq!(report["per_class"].as_array().unwrap().len(), 11);
    for key in ["jaccard_accuracy", "micro_f1", "macro_f1"] {
        assert!((0.0..=1.0).contains(&report[key].as_f64().unwrap()), "{key}");
    }
}

#[test]
fn eval_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), json!({})).join("model.ckpt");
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let res = run(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&empty)]);
    assert_ne!(res.status.code(), Some(0));
    assert!(stderr(&res).contains("no examples"), "{}", stderr(&res));

    let foreign = dir.path().join("foreign.jsonl");
    fs::write(&foreign, "{\"text\": \"so cross\", \"labels\": [\"rage\"]}\n").unwrap();
    let res = run(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&foreign)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(stderr(&res).contains("rage"), "{}", stderr(&res));

    let res = run(&["eval", "--checkpoint", s(&dir.path().join("none.ckpt")), "--corpus", s(&fixture("test.jsonl"))]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn restricted_eval_picks_one_kept_label() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path(), json!({})).join("model.ckpt");
    let out = dir.path().join("eval");
    let res = run(&[
        "eval", "--checkpoint", s(&ckpt), "--corpus", s(&fixture("test.jsonl")), "--kept", "anger,fear,joy,sadness",
        "--min-support", "1", "--out", s(&out),
    ]);
    assert!(res.status.success(), "{}", stderr(&res));
    let report = read_json(&out.join("report.json"));
    let single = &report["single_label"];
    assert!(single.is_object(), "{report}");
    let restricted = &report["restricted"];
    assert!(restricted["n_examples"].as_u64().unwrap() > 0);
    let res = run(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&fixture("test.jsonl")), "--kept", "anger,rage"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn singlelabel_training_and_cross_validation() {
    let dir = tempfile::tempdir().unwrap();
    let extra = json!({
        "mode": { "kind": "singlelabel", "kept": ["anger", "fear", "joy", "sadness"] },
        "eval": { "folds": 3, "min_support": 1 },
        "optim": { "epochs": 2 }
    });
    let out = trained(dir.path(), extra);
    let cv = read_json(&out.join("cv.json"));
    assert_eq!(cv["folds"].as_array().unwrap().len(), 3, "{cv}");
}
