//! The `factrank` binary end to end on small inputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY_CONFIG: &str = "\
[ranker]
k1 = 6
patterns = 2
epochs = 2
batch_size = 8
val_fraction = 0.2
seed = 3

[ranker.encoder]
dim = 8
heads = 2
arp_layers = 1
max_len = 48
ffn_mult = 2

[ranker.pretrain]
max_pairs = 150
epochs = 1
";

fn factrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factrank"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = factrank(dir, args);
    assert!(
        out.status.success(),
        "factrank {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn help_and_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(factrank(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(factrank(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(factrank(dir.path(), &["index"]).status.code(), Some(1));
    let missing = factrank(dir.path(), &["index", "--articles", "/nonexistent/a.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn bad_input_files_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.jsonl"), "{\"id\":\"a\",\"source\":\"s\",\"text\":\"x y\"}\n{oops\n").unwrap();
    let out = factrank(d, &["index", "--articles", &p(d, "a.jsonl")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(d.join("c.jsonl"), "{\"id\":\"c\",\"text\":\"a\"}\n{\"id\":\"c\",\"text\":\"b\"}\n").unwrap();
    fs::write(d.join("a.jsonl"), "{\"id\":\"a\",\"source\":\"s\",\"text\":\"x y\"}\n").unwrap();
    let out = factrank(d, &["build-vocab", "--claims", &p(d, "c.jsonl"), "--articles", &p(d, "a.jsonl")]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(d.join("bad.toml"), "[ranker]\nno_such_key = 1\n").unwrap();
    let out = factrank(d, &["--config", &p(d, "bad.toml"), "index", "--articles", &p(d, "a.jsonl")]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn generation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        ok(dir, &["gen-synthetic", "--seed", "9", "--claims", "8", "--articles", "20", "--holdout", "2"]);
    }
    for name in ["claims.jsonl", "articles.jsonl", "labels.jsonl", "planted.jsonl", "test-claims.jsonl", "train-labels.jsonl"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let manifest = json(&a.path().join("gen-synthetic.manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 8);
    let test = fs::read_to_string(a.path().join("test-claims.jsonl")).unwrap();
    assert_eq!(test.lines().count(), 2);

    let too_many = factrank(a.path(), &["gen-synthetic", "--seed", "9", "--claims", "3", "--articles", "5", "--holdout", "4"]);
    assert_eq!(too_many.status.code(), Some(1));
}

#[test]
fn small_pipeline_runs_through() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY_CONFIG).unwrap();
    let cfg = p(d, "tiny.toml");
    ok(d, &["gen-synthetic", "--seed", "4", "--claims", "15", "--articles", "40", "--holdout", "5"]);
    let (arts, tr_c, tr_l) = (p(d, "articles.jsonl"), p(d, "train-claims.jsonl"), p(d, "train-labels.jsonl"));
    let (te_c, te_l) = (p(d, "test-claims.jsonl"), p(d, "test-labels.jsonl"));

    ok(d, &["--config", &cfg, "index", "--articles", &arts]);
    ok(d, &["--config", &cfg, "retrieve", "--index", &p(d, "index.bin"), "--claims", &te_c]);
    let candidates = fs::read_to_string(d.join("candidates.jsonl")).unwrap();
    assert_eq!(candidates.lines().count(), 5);
    for line in candidates.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert!(v["ranking"].as_array().unwrap().len() <= 6);
    }

    ok(d, &["--config", &cfg, "train", "--claims", &tr_c, "--articles", &arts, "--labels", &tr_l]);
    let log = json(&d.join("training-log.json"));
    assert!(log["pretrain"].is_object());
    assert!(!log["epochs"].as_array().unwrap().is_empty());
    let manifest = json(&d.join("train.manifest.json"));
    assert_eq!(manifest["checkpoint_hash"].as_str().unwrap().len(), 64);

    ok(d, &["--config", &cfg, "rerank", "--model", &p(d, "model.ckpt"), "--claims", &te_c, "--articles", &arts]);
    let first: Value = serde_json::from_str(fs::read_to_string(d.join("results.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let ranking = first["ranking"].as_array().unwrap();
    for w in ranking.windows(2) {
        assert!(w[0]["score"].as_f64() >= w[1]["score"].as_f64());
    }
    let key = &ranking[0]["key_sentences"][0];
    for field in ["index", "scr", "scr_Q", "scr_P", "pattern"] {
        assert!(!key[field].is_null(), "{field}");
    }

    ok(d, &["eval", "--results", &p(d, "results.jsonl"), "--labels", &te_l, "--k", "1,2"]);
    let eval = json(&d.join("eval.json"));
    for key in ["MRR", "MAP@1", "MAP@2", "HIT@1", "HIT@2"] {
        let v = eval[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }

    ok(d, &[
        "inspect-memory", "--model", &p(d, "model.ckpt"), "--log", &p(d, "training-log.json"), "--articles", &arts, "--top", "2",
    ]);
    let memory = fs::read_to_string(d.join("memory.txt")).unwrap();
    assert!(!memory.is_empty());

    let out = factrank(d, &[
        "--config", &cfg, "ablate", "--variant", "no-such", "--claims", &tr_c, "--articles", &arts, "--labels", &tr_l,
        "--eval-claims", &te_c, "--eval-labels", &te_l,
    ]);
    assert_eq!(out.status.code(), Some(1));
}
