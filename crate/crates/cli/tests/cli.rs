use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn grit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grit"))
        .args(args)
        .env_remove("GRIT_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const DOCS: &str = r#"{"doc_id": "d1", "tokens": ["two", "men", "blew", "up", "the", "water", "pipes", "near", "the", "pipes"]}
"#;

// gold: three Victim entities {a, a2}, {b}, {c, c2}
const GOLD: &str = r#"{"doc_id": "x", "roles": {"Victim": [[{"text": "a"}, {"text": "a2"}], [{"text": "b"}], [{"text": "c"}, {"text": "c2"}]]}}
"#;
const PRED: &str = r#"{"doc_id": "x", "roles": {"Victim": [[{"text": "a"}], [{"text": "b"}], [{"text": "c"}], [{"text": "c2"}]]}}
"#;

#[test]
fn score_prints_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", GOLD);
    let pred = write(dir.path(), "pred.jsonl", PRED);
    let out_dir = dir.path().join("out");
    let out = grit(&["score", "--gold", s(&gold), "--pred", s(&pred), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    let micro = table.lines().find(|l| l.starts_with("micro")).unwrap();
    let cols: Vec<&str> = micro.split_whitespace().collect();
    assert_eq!(cols, ["micro", "3", "4", "3", "0.75", "1.00", "0.86"]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("score.json")).unwrap()).unwrap();
    assert_eq!(json["micro"]["matched"], 3);
    assert!((json["micro"]["precision"].as_f64().unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", GOLD);
    let out_dir = dir.path().join("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_grit"))
        .args(["score", "--gold", s(&gold), "--pred", s(&gold)])
        .env("GRIT_OUTPUT_DIR", &out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(out_dir.join("score.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let gold = write(dir.path(), "gold.jsonl", GOLD);
    let docs = write(dir.path(), "docs.jsonl", DOCS);
    let bad_json = write(dir.path(), "bad.jsonl", "{\"doc_id\": \"x\", \"roles\": \n");
    let bad_role = write(dir.path(), "role.jsonl", r#"{"doc_id": "x", "roles": {"Villain": []}}"#);
    let bad_toml = write(dir.path(), "bad.toml", "[model\nhidden_dim = 3");

    assert_eq!(code(&grit(&["--help"])), 0);
    assert_eq!(code(&grit(&["score", "--gold", s(&gold)])), 1);
    assert_eq!(code(&grit(&["frobnicate"])), 1);
    assert_eq!(code(&grit(&["score", "--gold", s(&bad_json), "--pred", s(&gold)])), 2);
    assert_eq!(code(&grit(&["score", "--gold", s(&bad_role), "--pred", s(&gold)])), 2);
    assert_eq!(
        code(&grit(&["score", "--config", s(&bad_toml), "--gold", s(&gold), "--pred", s(&gold)])),
        2
    );
    // gold for "x" but the documents only hold "d1"
    let out = grit(&["score", "--gold", s(&gold), "--pred", s(&gold), "--docs", s(&docs)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dangling doc_id"));
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&grit(&["score", "--gold", s(&missing), "--pred", s(&gold)])), 4);
    assert_eq!(code(&grit(&["synth"])), 3);
}

#[test]
fn linearize_delinearize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let docs = write(dir.path(), "docs.jsonl", DOCS);
    let gold = write(
        dir.path(),
        "gold.jsonl",
        r#"{"doc_id": "d1", "roles": {"PerpInd": [[{"text": "two men", "begin": 0, "end": 1}]], "Target": [[{"text": "water pipes"}, {"text": "pipes"}]]}}
"#,
    );
    let out = grit(&["linearize", "--docs", s(&docs), "--gold", s(&gold)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out), "d1\t1 2 | | 6 7 | | |\n");

    let seqs = write(dir.path(), "seqs.txt", &stdout(&out));
    let out = grit(&["delinearize", "--docs", s(&docs), "--seqs", s(&seqs)]);
    assert_eq!(code(&out), 0);
    let pred = write(dir.path(), "pred.jsonl", &stdout(&out));
    let out = grit(&["score", "--gold", s(&gold), "--pred", s(&pred), "--docs", s(&docs)]);
    let micro = stdout(&out).lines().find(|l| l.starts_with("micro")).unwrap().to_string();
    assert!(micro.ends_with("1.00   1.00   1.00"), "{micro}");

    let broken = write(dir.path(), "broken.txt", "d1\t1 2 3 | | | | |\n");
    let out = grit(&["delinearize", "--docs", s(&docs), "--seqs", s(&broken)]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PerpInd"));
    let out = grit(&["delinearize", "--lenient", "--docs", s(&docs), "--seqs", s(&broken)]);
    assert_eq!(code(&out), 0);
}

const TINY: &str = r#"
[model]
hidden_dim = 16
num_heads = 2
feedforward_dim = 32
max_source_len = 96

[train]
epochs = 2
batch_size = 8
warmup_steps = 2

[synth]
train_docs = 24
dev_docs = 6
"#;

#[test]
fn synth_train_decode_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let syn = dir.path().join("syn");
    assert_eq!(code(&grit(&["synth", "--config", s(&cfg), "--out", s(&syn)])), 0);
    let train_docs = syn.join("train.docs.jsonl");
    let train_gold = syn.join("train.templates.jsonl");
    let dev_docs = syn.join("dev.docs.jsonl");
    let dev_gold = syn.join("dev.templates.jsonl");

    let run = |name: &str| {
        let model = dir.path().join(name);
        let out = grit(&[
            "train", "--config", s(&cfg), "--docs", s(&train_docs), "--gold", s(&train_gold),
            "--dev-docs", s(&dev_docs), "--dev-gold", s(&dev_gold), "--out", s(&model),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        model
    };
    let a = run("a");
    let b = run("b");
    let ckpt_a = fs::read(a.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt_a, fs::read(b.join("checkpoint.json")).unwrap());
    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec["loss"].is_number() && rec["dev_f1"].is_number());
    }
    let echoed = fs::read_to_string(a.join("config.toml")).unwrap();
    assert!(echoed.contains("hidden_dim = 16"));

    let pred_dir = dir.path().join("pred");
    let out = grit(&[
        "decode", "--checkpoint", s(&a.join("checkpoint.json")), "--docs", s(&dev_docs), "--out", s(&pred_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let preds = pred_dir.join("predictions.jsonl");
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 6);
    let again = grit(&["decode", "--checkpoint", s(&a.join("checkpoint.json")), "--docs", s(&dev_docs)]);
    assert_eq!(again.stdout, fs::read(&preds).unwrap());
    let out = grit(&["score", "--gold", s(&dev_gold), "--pred", s(&preds), "--docs", s(&dev_docs)]);
    assert_eq!(code(&out), 0);

    let out = grit(&[
        "analyze", "ablate", "--checkpoint", s(&a.join("checkpoint.json")), "--docs", s(&dev_docs),
        "--gold", s(&dev_gold),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("no-sep-downweigh"));

    // max_source_len differing from the checkpoint is a shape mismatch
    let out = grit(&[
        "decode", "--checkpoint", s(&a.join("checkpoint.json")), "--docs", s(&dev_docs), "--max-source-len", "64",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn analyses_on_gold_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", TINY);
    let syn = dir.path().join("syn");
    assert_eq!(code(&grit(&["synth", "--config", s(&cfg), "--out", s(&syn)])), 0);
    let gold = syn.join("train.templates.jsonl");
    let docs = syn.join("train.docs.jsonl");
    let empty = write(dir.path(), "empty.jsonl", "");

    let out = grit(&["analyze", "buckets", "--gold", s(&gold), "--pred", s(&gold), "--docs", s(&docs)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("k>1.75"));

    let out = grit(&["analyze", "nested", "--gold", s(&gold), "--pred", s(&gold)]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("nest PerpOrg in PerpInd"));

    let out_dir = dir.path().join("boot");
    let out = grit(&[
        "analyze", "bootstrap", "--gold", s(&gold), "--pred", s(&gold), "--pred-b", s(&gold),
        "--iterations", "1000", "--seed", "4", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("bootstrap.json")).unwrap()).unwrap();
    assert_eq!(json["p_value"], 1.0);

    // the empty system covers no documents, the other covers all of them
    let out = grit(&["analyze", "bootstrap", "--gold", s(&gold), "--pred", s(&gold), "--pred-b", s(&empty)]);
    assert_eq!(code(&out), 3);
    let out = grit(&[
        "analyze", "bootstrap", "--gold", s(&gold), "--pred", s(&gold), "--pred-b", s(&gold), "--iterations", "10",
    ]);
    assert_eq!(code(&out), 3);
}
