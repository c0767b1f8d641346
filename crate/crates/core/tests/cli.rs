use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_oosjoint");

fn oosjoint(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    assert_eq!(text.lines().count(), 1, "{text}");
    serde_json::from_str(text.trim()).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// Synthetic data plus a trained checkpoint at `m.hjm`.
    fn trained() -> Self {
        let ws = Self::new();
        ws.train(&[]).assert_ok();
        ws
    }

    fn new() -> Self {
        let ws = Self { dir: tempfile::tempdir().unwrap() };
        let out = oosjoint(&["synth", "--out-data", &ws.s("d.json"), "--out-domain-map", &ws.s("m.json"), "--seed", "3"]);
        out.assert_ok();
        let cfg = r#"{"data": "d.json", "domain_map": "m.json", "checkpoint_out": "m.hjm", "reports_out": "reports",
            "encoder": {"buckets": 4096, "dim": 16, "orders": [1, 2]}, "learning_rate": 0.01, "max_epochs": 4}"#;
        std::fs::write(ws.p("run.json"), cfg).unwrap();
        ws
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }

    fn train(&self, extra: &[&str]) -> Output {
        let cfg = self.s("run.json");
        let mut args = vec!["train", "--config", &cfg];
        args.extend_from_slice(extra);
        oosjoint(&args)
    }
}

trait Check {
    fn assert_ok(&self);
    fn code(&self) -> i32;
}

impl Check for Output {
    fn assert_ok(&self) {
        assert!(self.status.success(), "{}", String::from_utf8_lossy(&self.stderr));
    }

    fn code(&self) -> i32 {
        self.status.code().unwrap()
    }
}

#[test]
fn train_writes_checkpoint_and_reports() {
    let ws = Workspace::new();
    let out = ws.train(&["--seed", "9"]);
    out.assert_ok();
    let summary = stdout_json(&out);
    assert_eq!(summary["train_config"]["seed"], 9);
    assert_eq!(summary["train_config"]["learning_rate"], 0.01);
    assert!(ws.p("m.hjm").exists());
    let on_disk: Value = serde_json::from_slice(&std::fs::read(ws.p("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(on_disk, summary);
    let history = std::fs::read_to_string(ws.p("reports/history.jsonl")).unwrap();
    assert_eq!(history.lines().count() as u64, summary["epochs_run"].as_u64().unwrap());
    for line in history.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert!(rec["lambda"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn bad_flags_exit_with_config_code() {
    let ws = Workspace::new();
    let out = ws.train(&["--learning-rate", "-0.001"]);
    assert_eq!(out.code(), 2);
    assert_eq!(stderr_json(&out)["code"], 2);
    assert!(!ws.p("m.hjm").exists());

    assert_eq!(ws.train(&["--structure", "sideways"]).code(), 2);
    assert_eq!(ws.train(&["--mode", "external"]).code(), 2);
    assert_eq!(oosjoint(&["train", "--config", &ws.s("missing.json")]).code(), 2);
    assert_eq!(oosjoint(&["frobnicate"]).code(), 2);
}

#[test]
fn external_mode_reports_first_missing_utterance() {
    let ws = Workspace::new();
    let json: Value = serde_json::from_slice(&std::fs::read(ws.p("d.json")).unwrap()).unwrap();
    let mut texts = Vec::new();
    for split in ["train", "val", "test", "oos_train", "oos_val", "oos_test"] {
        for pair in json[split].as_array().into_iter().flatten() {
            texts.push(pair[0].as_str().unwrap().to_string());
        }
    }
    assert!(texts.len() > 10);
    // the store covers everything but one utterance
    let missing = texts[5].clone();
    let mut store = oosjoint::encoder::EmbeddingStore::new(4).unwrap();
    for (i, t) in texts.iter().enumerate() {
        if *t != missing && store.get(t).is_none() {
            store.insert(t.clone(), vec![i as f32 * 0.01, 1.0, -1.0, 0.5]).unwrap();
        }
    }
    store.write(ws.p("e.emb")).unwrap();
    let cfg = r#"{"data": "d.json", "domain_map": "m.json", "checkpoint_out": "m.hjm", "reports_out": "reports",
        "mode": "external", "embeddings": "e.emb", "max_epochs": 2}"#;
    std::fs::write(ws.p("ext.json"), cfg).unwrap();
    let out = oosjoint(&["train", "--config", &ws.s("ext.json")]);
    assert_eq!(out.code(), 3);
    let diag = stderr_json(&out);
    assert!(diag["message"].as_str().unwrap().contains(&missing), "{diag}");
    assert!(!ws.p("m.hjm").exists());
}

#[test]
fn eval_at_zero_threshold_and_label_mismatch() {
    let ws = Workspace::trained();
    let ck = ws.s("m.hjm");
    let out = oosjoint(&["eval", "--checkpoint", &ck, "--data", &ws.s("d.json"), "--domain-map", &ws.s("m.json")]);
    out.assert_ok();
    let report = stdout_json(&out);
    assert_eq!(report["split"], "test");
    assert_eq!(report["tau"], 0.0);
    let c = &report["counts"];
    let total = c["total"].as_u64().unwrap();
    assert_eq!(c["tp"].as_u64().unwrap() + c["fp"].as_u64().unwrap() + c["fn"].as_u64().unwrap() + c["tn"].as_u64().unwrap(), total);
    assert_eq!(report["accuracy_all"].as_f64().unwrap(), c["correct"].as_u64().unwrap() as f64 / total as f64);

    let mut map: Value = serde_json::from_slice(&std::fs::read(ws.p("m.json")).unwrap()).unwrap();
    map.as_object_mut().unwrap().insert("extra_domain".into(), serde_json::json!(["extra_intent"]));
    std::fs::write(ws.p("m2.json"), map.to_string()).unwrap();
    let out = oosjoint(&["eval", "--checkpoint", &ck, "--data", &ws.s("d.json"), "--domain-map", &ws.s("m2.json")]);
    assert_eq!(out.code(), 3);
    assert_eq!(stderr_json(&out)["error"], "data");

    std::fs::write(ws.p("junk.hjm"), b"HJM1garbage").unwrap();
    let out = oosjoint(&["eval", "--checkpoint", &ws.s("junk.hjm"), "--data", &ws.s("d.json")]);
    assert_eq!(out.code(), 3);
}

#[test]
fn sweep_writes_one_row_per_threshold() {
    let ws = Workspace::trained();
    let (ck, data, tsv) = (ws.s("m.hjm"), ws.s("d.json"), ws.s("sweep.tsv"));
    let out = oosjoint(&["sweep", "--checkpoint", &ck, "--data", &data, "--out", &tsv]);
    out.assert_ok();
    let text = std::fs::read_to_string(&tsv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "tau\tacc_all\tacc_in\tP\tR\tF1");
    assert_eq!(lines.len(), 10);
    let recall: Vec<f64> = lines[1..].iter().map(|l| l.split('\t').nth(4).unwrap().parse().unwrap()).collect();
    assert!(recall.windows(2).all(|w| w[0] <= w[1]), "{recall:?}");
    let best = stdout_json(&out);
    assert_eq!(best["split"], "valid");
    assert!(best["test_at_best"]["oos_f1"].is_number());

    let out = oosjoint(&["sweep", "--checkpoint", &ck, "--data", &data, "--out", &tsv, "--grid", "0.9:0.1:0.1"]);
    assert_eq!(out.code(), 2);
    let out = oosjoint(&["sweep", "--checkpoint", &ck, "--data", &data, "--out", &tsv, "--grid", "0.3,0.2"]);
    assert_eq!(out.code(), 2);
}

fn classify(ck: &Path, input: &str) -> Output {
    let mut child = Command::new(BIN)
        .args(["classify", "--checkpoint", ck.to_str().unwrap(), "--tau", "0.3"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

#[test]
fn classify_answers_every_line() {
    let ws = Workspace::trained();
    let out = classify(&ws.p("m.hjm"), "d0 w0 f1\n\nz3 f2 f7\n...\nd1 w4\n");
    out.assert_ok();
    let lines: Vec<Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    let status: Vec<i64> = lines.iter().map(|l| l["status"].as_i64().unwrap()).collect();
    assert_eq!(status, [0, 1, 0, 1, 0]);
    for l in lines.iter().filter(|l| l["status"] == 0) {
        let oos = l["oos"].as_bool().unwrap();
        assert_eq!(oos, l["intent"] == "oos");
        let top = l["top"].as_array().unwrap();
        let p: Vec<f64> = top.iter().map(|t| t["p"].as_f64().unwrap()).collect();
        assert!(p.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn export_writes_one_row_per_example() {
    let ws = Workspace::trained();
    let out = oosjoint(&["export", "--checkpoint", &ws.s("m.hjm"), "--data", &ws.s("d.json"), "--split", "valid", "--out", &ws.s("rep/valid.tsv")]);
    out.assert_ok();
    let rows = stdout_json(&out)["rows"].as_u64().unwrap() as usize;
    let text = std::fs::read_to_string(ws.p("rep/valid.tsv")).unwrap();
    assert_eq!(text.lines().count(), rows);
    assert!(text.lines().all(|l| l.split('\t').count() == 3 + 2 * 16));
}

#[test]
fn validate_compares_counts() {
    let ws = Workspace::new();
    // seed 3 synth: 9 intents x 20 train / 10 eval, 30 oos in each split
    let good = r#"{"train": {"total": 210, "oos": 30, "per_intent": [20]},
        "valid": {"total": 120, "oos": 30, "per_intent": [10]},
        "test": {"total": 120, "oos": 30, "per_intent": [10]}}"#;
    std::fs::write(ws.p("good.json"), good).unwrap();
    let out = oosjoint(&["validate", "--data", &ws.s("d.json"), "--domain-map", &ws.s("m.json"), "--expect", &ws.s("good.json")]);
    out.assert_ok();
    assert_eq!(stdout_json(&out)["passed"], true);

    std::fs::write(ws.p("bad.json"), good.replace("210", "211")).unwrap();
    let out = oosjoint(&["validate", "--data", &ws.s("d.json"), "--domain-map", &ws.s("m.json"), "--expect", &ws.s("bad.json")]);
    assert_eq!(out.code(), 3);
    let report = stdout_json(&out);
    assert_eq!(report["passed"], false);
    assert_eq!(report["mismatches"].as_array().unwrap().len(), 1);
}
