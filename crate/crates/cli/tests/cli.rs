//! Subcommand behaviour and exit codes of the `device` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn device(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_device")).args(args).output().unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn fixtures(dir: &Path, seed: &str, n: &str) {
    let out = device(&["gen-fixtures", "--seed", seed, "--n", n, "--out", &s(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = device(&["eval", "--pred", "a", "--refs", "b", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(device(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(device(&["train", "--data", "x"]).status.code(), Some(2));
}

#[test]
fn validation_failures_exit_one_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fixtures(&data, "3", "2");
    let records = data.join("records.jsonl");
    let text = fs::read_to_string(&records).unwrap();
    fs::write(&records, text.replacen("\"width\":64", "\"width\":0", 1)).unwrap();
    let out = device(&[
        "train",
        "--data",
        &s(&data),
        "--config",
        &s(&data.join("config.json")),
        "--out",
        &s(&tmp.path().join("m.ckpt")),
        "--steps",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("img0000"), "{err}");

    let out = device(&[
        "eval",
        "--pred",
        &s(&tmp.path().join("missing.jsonl")),
        "--refs",
        &s(&records),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let out = device(&[
        "gen-fixtures",
        "--seed",
        "1",
        "--n",
        "0",
        "--out",
        &s(&tmp.path().join("none")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_fixtures_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    fixtures(&a, "9", "3");
    fixtures(&b, "9", "3");
    fixtures(&c, "10", "3");
    for name in ["records.jsonl", "vocab.txt", "embeddings.txt", "config.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(
        fs::read(a.join("records.jsonl")).unwrap(),
        fs::read(c.join("records.jsonl")).unwrap()
    );
}

#[test]
fn train_caption_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fixtures(&data, "5", "3");
    let ckpt = tmp.path().join("m.ckpt");
    let out = device(&[
        "train",
        "--data",
        &s(&data),
        "--config",
        &s(&data.join("config.json")),
        "--out",
        &s(&ckpt),
        "--steps",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred = tmp.path().join("pred.jsonl");
    let out = device(&["caption", "--ckpt", &s(&ckpt), "--data", &s(&data), "--out", &s(&pred)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let lines: Vec<serde_json::Value> = fs::read_to_string(&pred)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let obj = line.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["caption", "id", "token_sources"]);
        let words = obj["caption"].as_str().unwrap().split_whitespace().count();
        assert_eq!(obj["token_sources"].as_array().unwrap().len(), words);
        for src in obj["token_sources"].as_array().unwrap() {
            assert!(matches!(src["source"].as_str(), Some("vocab" | "ocr")));
            assert!(src["index"].is_u64());
        }
    }

    let out = device(&["eval", "--pred", &s(&pred), "--refs", &s(&data.join("records.jsonl"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("BLEU-4: ") && text.contains("CIDEr-D: "), "{text}");
}

#[test]
fn eval_identity_prints_perfect_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let refs = tmp.path().join("refs.jsonl");
    fs::write(
        &refs,
        "{\"id\":\"a\",\"caption\":\"a red bus on the road\"}\n{\"id\":\"b\",\"caption\":\"kfc7 sign above a door\"}\n",
    )
    .unwrap();
    let out = device(&["eval", "--pred", &s(&refs), "--refs", &s(&refs)]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("BLEU-4: 1.000000"), "{text}");
    assert!(text.contains("CIDEr-D: 10.000000"), "{text}");

    let single = tmp.path().join("single.jsonl");
    fs::write(&single, "{\"id\":\"a\",\"captions\":[\"a red bus\",\"a blue van\"]}\n").unwrap();
    let pred = tmp.path().join("pred.jsonl");
    fs::write(&pred, "{\"id\":\"a\",\"caption\":\"a red bus\"}\n").unwrap();
    assert_eq!(
        device(&["eval", "--pred", &s(&pred), "--refs", &s(&single)])
            .status
            .code(),
        Some(1)
    );
    let out = device(&[
        "eval",
        "--pred",
        &s(&pred),
        "--refs",
        &s(&single),
        "--idf-from-refs-only",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dump_bigrams_lists_fifty() {
    let out = device(&["dump-bigrams"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 50);
    assert!(lines.iter().all(|b| b.chars().count() == 2));
}

#[test]
fn gradcheck_passes_on_micro_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("micro.json");
    fs::write(
        &cfg,
        r#"{"t":16,"heads":2,"mmt_layers":1,"defum_layers":1,"K":2,"max_len":30,"seed":1,"lr":0.001}"#,
    )
    .unwrap();
    let out = device(&["gradcheck", "--config", &s(&cfg), "--seeds", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .filter(|l| l.starts_with("PASS"))
            .count(),
        4
    );
}
