use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "seed": 3,
  "synth": {"vocab_size": 120, "ambiguous_words": 4, "sentences": 200, "min_occurrences": 5},
  "data": {"eval_sentences": 60, "wic_dev_pairs": 40, "wic_test_pairs": 40, "sim_pairs": 30, "wsd_test": 20},
  "model": {"layers": 2, "heads": 2, "dim": 16, "ffn_dim": 32},
  "mlm": {"epochs": 1},
  "finetune": {"epochs": 1, "batch_size": 16, "layer_spec": {"n": 2}},
  "layer_spec": {"n": 2},
  "analysis": {"sample_sentences": 40, "repetitions": 2, "word_samples": 2, "words_per_sample": 10, "feature_spec": {"n": 2}},
  "sweep": {"knob": "dropout", "values": [0.0, 0.5]}
}"#;

fn wic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wic"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = wic(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Full pipeline into `root`; returns the fine-tuned checkpoint path.
fn pipeline(root: &Path) -> PathBuf {
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let (data, pre, ft) = (root.join("data"), root.join("pre"), root.join("ft"));
    let c = s(&cfg);
    ok(&["gen-synth", "--config", c, "-o", s(&data)]);
    ok(&["pretrain", "--config", c, "--corpus", s(&data.join("pretrain.txt")), "-o", s(&pre)]);
    let base = pre.join("model.ckpt");
    ok(&["finetune", "--config", c, "--checkpoint", s(&base), "--corpus", s(&data.join("train.txt")), "-o", s(&ft)]);
    let model = ft.join("model.ckpt");
    ok(&[
        "eval-wic", "--config", c, "--checkpoint", s(&model),
        "--dev", s(&data.join("wic_dev.tsv")), "--test", s(&data.join("wic_test.tsv")),
        "--per-layer", "-o", s(&root.join("wic")),
    ]);
    ok(&["eval-sim", "--config", c, "--checkpoint", s(&model), "--pairs", s(&data.join("sim.tsv")), "-o", s(&root.join("sim"))]);
    ok(&[
        "eval-wsd", "--config", c, "--checkpoint", s(&model),
        "--exemplars", s(&data.join("wsd_exemplars.tsv")), "--test", s(&data.join("wsd_test.tsv")),
        "-o", s(&root.join("wsd")),
    ]);
    ok(&["analyze", "--config", c, "--checkpoint", s(&model), "--corpus", s(&data.join("eval.txt")), "-o", s(&root.join("geo"))]);
    ok(&[
        "dump-embeddings", "--config", c, "--checkpoint", s(&model),
        "--input", s(&data.join("eval_targeted.tsv")), "-o", s(&root.join("emb")),
    ]);
    ok(&[
        "sweep", "--config", c, "--checkpoint", s(&base), "--corpus", s(&data.join("train.txt")),
        "--dev", s(&data.join("wic_dev.tsv")), "--test", s(&data.join("wic_test.tsv")),
        "--knob", "span-k", "--values", "0,2", "-o", s(&root.join("sweep")),
    ]);
    model
}

#[test]
fn full_pipeline_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());

    for dir in ["data", "pre", "ft", "wic", "sim", "wsd", "geo", "emb", "sweep"] {
        assert!(a.path().join(dir).join("config.json").is_file(), "{dir} lacks the resolved config");
        assert!(a.path().join(dir).join("run.json").is_file(), "{dir} lacks run.json");
    }
    for f in ["wic/report.json", "sim/report.json", "wsd/report.json", "geo/geometry.json", "geo/geometry.csv", "emb/embeddings.jsonl"] {
        let p = a.path().join(f);
        assert!(p.is_file(), "{f} missing");
    }
    // byte-identical artifacts for the same seed
    for f in [
        "data/pretrain.txt", "data/wic_test.tsv", "pre/model.ckpt", "pre/loss.csv", "ft/model.ckpt", "ft/loss.csv",
        "wic/report.json", "geo/geometry.json", "emb/embeddings.jsonl", "sweep/sweep.csv",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("wic/report.json")).unwrap()).unwrap();
    assert!(report.to_string().contains("accuracy"), "{report}");

    // the sweep flags land in the resolved config
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("sweep/config.json")).unwrap()).unwrap();
    assert_eq!(resolved["sweep"]["knob"], "span_k");
    assert_eq!(resolved["sweep"]["values"], serde_json::json!([0.0, 2.0]));
    let csv = std::fs::read_to_string(a.path().join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"seed": 1, "finetune": {"tau": 0.2}}"#).unwrap();
    let out = dir.path().join("o");
    ok(&["gen-synth", "--config", s(&cfg), "--seed", "9", "--set", "finetune.tau=0.7", "--set", "synth.ambiguous_words=4",
        "--set", "synth.min_occurrences=1", "--set", "data.eval_sentences=20", "-o", s(&out)]);
    let resolved: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["finetune"]["tau"], 0.7);
    assert_eq!(resolved["finetune"]["seed"], 9);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"finetune": {"temprature": 0.1}}"#).unwrap();
    let out = wic(&["gen-synth", "--config", s(&cfg), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temprature"));

    let out = wic(&["gen-synth", "--set", "finetune.dropout=2", "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = wic(&["gen-synth", "--config", s(&dir.path().join("absent.json")), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = wic(&["pretrain", "--corpus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_data_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = wic(&["pretrain", "--corpus", s(&dir.path().join("missing.txt")), "-o", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.txt"));

    let ckpt = dir.path().join("junk.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let input = dir.path().join("t.tsv");
    std::fs::write(&input, "the bank\t4:8\n").unwrap();
    let out = wic(&["dump-embeddings", "--checkpoint", s(&ckpt), "--input", s(&input), "-o", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let data = dir.path().join("data");
    ok(&["gen-synth", "--config", s(&cfg), "-o", s(&data)]);
    let out = wic(&[
        "pretrain", "--config", s(&cfg), "--set", "mlm.learning_rate=1e30",
        "--corpus", s(&data.join("pretrain.txt")), "-o", s(&dir.path().join("p")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite"));
}
