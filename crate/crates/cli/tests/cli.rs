use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcf::params::{encode_checkpoint, CheckpointMeta, ParamStore};
use serde_json::Value;

fn rcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rcf(args);
    assert!(
        out.status.success(),
        "rcf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--embedding-dim", "8", "--attention-factor", "4", "--mlp-hidden", "8", "--epochs", "2", "--batch-size", "64",
];

/// Small synthetic corpus; returns the bundle path.
fn synthetic(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&["prepare", "--synthetic", "--users", "40", "--items", "60", "--out", s(&data)]);
    data.join("corpus.bin")
}

fn train(corpus: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = vec!["train", "--corpus", s(corpus), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn prepare_synthetic_writes_bundle_sidecars_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = synthetic(dir.path());
    let data = bundle.parent().unwrap();
    for f in ["interactions.tsv", "relations.tsv", "ground_truth.json", "summary.json", "items.vocab.tsv", "values.vocab.tsv"] {
        assert!(data.join(f).exists(), "{f}");
    }
    let summary = read_json(&data.join("summary.json"));
    assert_eq!(summary["summary"]["users"], 40);
    assert_eq!(summary["summary"]["types"], 4);

    let again = dir.path().join("again");
    ok(&["prepare", "--synthetic", "--users", "40", "--items", "60", "--out", s(&again)]);
    assert_eq!(std::fs::read(&bundle).unwrap(), std::fs::read(again.join("corpus.bin")).unwrap());
}

#[test]
fn prepare_without_relations_warns_and_keeps_latent_type() {
    let dir = tempfile::tempdir().unwrap();
    let inter = dir.path().join("inter.tsv");
    let mut text = String::new();
    for u in 0..5 {
        for i in 0..6 {
            text.push_str(&format!("u{u}\ti{}\n", (u + i * 2) % 9));
        }
    }
    std::fs::write(&inter, text).unwrap();
    let out = rcf(&["prepare", "--interactions", s(&inter), "--out", s(&dir.path().join("p"))]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no relation file"));
    let summary = read_json(&dir.path().join("p/summary.json"));
    assert_eq!(summary["summary"]["types"], 1);
    assert_eq!(summary["summary"]["triplets"], 0);
}

#[test]
fn train_eval_and_reproduce_from_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic(dir.path());
    let run = dir.path().join("run");
    let stdout = train(&corpus, &run, &["--gamma", "0"]);
    assert!(stdout.contains("valid NDCG@10"), "{stdout}");

    let log = std::fs::read_to_string(run.join("train.ndjson")).unwrap();
    let steps: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["kind"] == "step")
        .collect();
    assert!(!steps.is_empty());
    // γ = 0: the relational loss is still computed and logged
    assert!(steps.iter().all(|v| v["l_rel"].as_f64().is_some_and(|x| x > 0.0)));

    let again = dir.path().join("again");
    ok(&["train", "--config", s(&run.join("run.cfg")), "--out", s(&again)]);
    assert_eq!(std::fs::read(run.join("model.ckpt")).unwrap(), std::fs::read(again.join("model.ckpt")).unwrap());

    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let ckpt = run.join("model.ckpt");
    ok(&["eval", "--checkpoint", s(&ckpt), "--candidates", "sampled-20", "--seed", "7", "--out", s(&a)]);
    ok(&["eval", "--checkpoint", s(&ckpt), "--candidates", "sampled-20", "--seed", "7", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let report = read_json(&a);
    let keys: Vec<&String> = report["summary"].as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 9);
    for k in [5, 10, 20] {
        assert!(report["summary"][format!("HR@{k}")].is_number());
    }
    assert_eq!(report["mode"], "sampled-20");
    assert_eq!(report["config"]["gamma"], "0");
    assert_eq!(report["perUser"].as_array().unwrap().len(), 40);
}

#[test]
fn zero_checkpoint_gives_floor_metrics_and_bad_shapes_fail() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = synthetic(dir.path());
    let corpus = rcf::corpus::read_bundle(&corpus_path).unwrap();
    let mut run = rcf::config::RunConfig::default();
    for (k, v) in [("embedding_dim", "8"), ("attention_factor", "4"), ("mlp_hidden", "8")] {
        run.set(k, v).unwrap();
    }
    run.corpus = Some(corpus_path.clone());
    let dims = run.model.dims(corpus.n_users(), corpus.n_items(), corpus.n_types(), corpus.n_values());
    let meta = CheckpointMeta { dims, seed: 0, epoch: 0, config_hash: run.hash(), config: run.to_json() };
    let zero = dir.path().join("zero.ckpt");
    std::fs::write(&zero, encode_checkpoint(&ParamStore::<f32>::zeros(dims), &meta).unwrap()).unwrap();
    let rep = dir.path().join("zero.json");
    ok(&["eval", "--checkpoint", s(&zero), "--out", s(&rep)]);
    let report = read_json(&rep);
    for (_, v) in report["summary"].as_object().unwrap() {
        assert_eq!(v.as_f64().unwrap(), 0.0);
    }

    // a checkpoint for a different corpus
    let other = dir.path().join("other");
    ok(&["prepare", "--synthetic", "--users", "30", "--items", "50", "--out", s(&other)]);
    let out = rcf(&["eval", "--checkpoint", s(&zero), "--corpus", s(&other.join("corpus.bin"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("shape mismatch"));
}

#[test]
fn ablate_emits_seven_rows_with_signed_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic(dir.path());
    let out = dir.path().join("ablate.json");
    let mut args = vec!["ablate", "--corpus", s(&corpus), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    let table = ok(&args);
    assert_eq!(table.lines().count(), 8, "{table}");
    assert!(table.lines().nth(1).unwrap().starts_with("full"));
    assert!(table.contains('%'));
    let body = read_json(&out);
    let rows = body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[0]["decNDCG@10"], 0.0);
    let labels: Vec<&str> = rows.iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["full", "single", "type-only", "value-only", "avg1", "avg2", "avg-both"]);
}

#[test]
fn sweep_gamma_emits_one_row_per_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic(dir.path());
    let out = dir.path().join("sweep.json");
    let mut args = vec!["sweep-gamma", "--corpus", s(&corpus), "--out", s(&out)];
    args.extend_from_slice(SMALL);
    let text = ok(&args);
    assert_eq!(text.lines().count(), 5, "{text}");
    let points = read_json(&out)["points"].as_array().unwrap().clone();
    let gammas: Vec<f64> = points.iter().map(|p| p["gamma"].as_f64().unwrap()).collect();
    assert_eq!(gammas, [0.0, 0.001, 0.01, 0.1]);

    let mut args = vec!["sweep-gamma", "--corpus", s(&corpus), "--gammas", "0.01"];
    args.extend_from_slice(SMALL);
    assert_eq!(ok(&args).lines().count(), 2);
}

#[test]
fn explain_records_aggregate_and_unknown_user() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic(dir.path());
    let run = dir.path().join("run");
    train(&corpus, &run, &[]);
    let ckpt = run.join("model.ckpt");

    let text = ok(&["explain", "--checkpoint", s(&ckpt), "--user", "user0001", "--top-k", "3"]);
    let body: Value = serde_json::from_str(&text).unwrap();
    let records = body["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    for r in records {
        let total: f64 = r["alpha"].as_array().unwrap().iter().map(|a| a["alpha"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        let sentence = r["sentence"].as_str().unwrap();
        assert!(sentence.contains("is recommended to you because"));
        let top = &r["entries"][0];
        assert!(sentence.contains(top["history_item"].as_str().unwrap()));
        assert!(sentence.contains(top["value"].as_str().unwrap()));
    }

    let text = ok(&["explain", "--checkpoint", s(&ckpt), "--aggregate"]);
    let rows = serde_json::from_str::<Value>(&text).unwrap()["aggregate"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 4);
    let total: f64 = rows.iter().map(|r| r["alpha"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);

    let out = rcf(&["explain", "--checkpoint", s(&ckpt), "--user", "nobody"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown user"));
}

#[test]
fn gradcheck_passes_and_corruption_fails_by_name() {
    let stdout = ok(&["gradcheck"]);
    assert!(stdout.contains("L_rel") && stdout.contains("L_rec"));
    let out = rcf(&["gradcheck", "--corrupt", "L_rel"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("L_rel"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    assert_eq!(code(&rcf(&["train", "--no-such-flag"])), 1);
    assert_eq!(code(&rcf(&["frobnicate"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let corpus = synthetic(dir.path());
    let out = rcf(&[
        "train", "--corpus", s(&corpus), "--out", s(&dir.path().join("x")), "--mode", "single", "--attn-override", "avg1",
    ]);
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("x").exists());
    assert_eq!(code(&rcf(&["train", "--out", s(&dir.path().join("y"))])), 1);
    assert_eq!(code(&rcf(&["--help"])), 0);
}
