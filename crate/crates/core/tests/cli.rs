use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Map, Value};

fn screenqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_screenqa"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(path: &Path, entries: Value) {
    std::fs::write(path, serde_json::to_string_pretty(&entries).unwrap()).unwrap();
}

/// Writes a small synthetic corpus into `dir` and returns its config file,
/// shrunk for quick training.
fn small_corpus(dir: &Path) -> PathBuf {
    let seed_cfg = dir.join("synth.json");
    write_config(
        &seed_cfg,
        json!({
            "seed": 3,
            "synth.n_videos": 2,
            "synth.sents_per_video": 15,
            "synth.kb_size": 20,
            "synth.n_triples": 60,
            "paths.out": "data",
        }),
    );
    let out = screenqa(&["synth-data", "--config", seed_cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let config = dir.join("data/config.json");
    let mut flat: Map<String, Value> = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    flat.insert("train.max_epochs".into(), 3.into());
    flat.insert("train.batch_size".into(), 16.into());
    flat.insert("walk.walks_per_node".into(), 10.into());
    flat.insert("walk.walk_length".into(), 10.into());
    write_config(&config, Value::Object(flat));
    config
}

fn manifest_outputs(path: &Path) -> BTreeMap<String, String> {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    serde_json::from_value(v["outputs"].clone()).unwrap()
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(code(&screenqa(&["no-such-command"])), 64);
    assert_eq!(code(&screenqa(&[])), 64);
    assert_eq!(code(&screenqa(&["--help"])), 0);
    assert_eq!(code(&screenqa(&["train", "--help"])), 0);
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    write_config(&bad, json!({"model.widht": 3}));
    let out = screenqa(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.widht"));

    let out_dir = dir.path().join("out");
    let out = screenqa(&["train", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "missing paths.kb is a validation error");
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.kb"));

    assert_eq!(code(&screenqa(&["train", "--variant", "fancy"])), 1);
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = screenqa(&["grad-check", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_data_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = screenqa(&["synth-data", "--seed", "4", "--out", d.path().to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    let outputs = manifest_outputs(&a.path().join("synth-data.manifest.json"));
    assert!(outputs.contains_key("qa.jsonl") && outputs.contains_key("config.json"));
    assert_eq!(outputs, manifest_outputs(&b.path().join("synth-data.manifest.json")));
    for name in outputs.keys() {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn full_pipeline_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_corpus(dir.path());
    let cfg = config.to_str().unwrap();
    let data = dir.path().join("data");

    for cmd in ["build-graph", "embed-graph", "match-cues"] {
        let out = screenqa(&[cmd, "--config", cfg]);
        assert_eq!(code(&out), 0, "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let graph: Value = serde_json::from_str(&std::fs::read_to_string(data.join("graph.json")).unwrap()).unwrap();
    assert!(graph["nodes"].as_array().is_some_and(|n| !n.is_empty()));
    assert!(data.join("graph_embeddings.txt").is_file());
    assert!(data.join("predicted_cues.jsonl").is_file());

    let out = screenqa(&["train", "--config", cfg, "--variant", "dual", "--w", "5", "--answer-init", "graph"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history: Value = serde_json::from_str(&std::fs::read_to_string(data.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["epochs"].as_array().unwrap().len(), 3);
    let manifest = std::fs::read_to_string(data.join("train.manifest.json")).unwrap();
    assert!(!manifest.contains("wall"), "wall time must stay out of the manifest");

    for source in ["gold", "predicted"] {
        let out = screenqa(&["evaluate", "--config", cfg, "--variant", "dual", "--cue-source", source]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report: Value = serde_json::from_str(&std::fs::read_to_string(data.join("report.json")).unwrap()).unwrap();
        let m = &report["metrics"];
        for key in ["mrr", "r1", "r5", "r10", "avg_rank"] {
            assert!(m[key].is_f64(), "{key} missing from {m}");
        }
        assert_eq!(report["cue_source"], source);
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("MRR"), "{stdout}");
    }

    let out = screenqa(&["stratify", "--config", cfg, "--variant", "dual"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out = screenqa(&["inspect-attention", "--config", cfg, "--variant", "dual"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read_to_string(data.join("attention.jsonl")).unwrap();
    let record: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert!(record["temporal"].is_array() && record["spatial"].is_array());
}

#[test]
fn evaluation_refuses_a_checkpoint_from_another_kb() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_corpus(dir.path());
    let cfg = config.to_str().unwrap();
    assert_eq!(code(&screenqa(&["train", "--config", cfg])), 0);

    // A superset KB: every triple still resolves, but the answer pool differs.
    let data = dir.path().join("data");
    let mut kb: Value = serde_json::from_str(&std::fs::read_to_string(data.join("kb.json")).unwrap()).unwrap();
    kb["entities"]
        .as_array_mut()
        .unwrap()
        .push(json!({"id": "zz_extra", "name": "extra", "type": "tool", "options": []}));
    std::fs::write(data.join("kb_plus.json"), kb.to_string()).unwrap();
    let mut flat: Map<String, Value> = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    flat.insert("paths.kb".into(), "kb_plus.json".into());
    write_config(&config, Value::Object(flat));
    let out = screenqa(&["evaluate", "--config", cfg]);
    assert_eq!(code(&out), 1);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("checkpoint mismatch"), "{stderr}");
}

#[test]
fn grad_check_passes_for_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    for v in ["base", "temporal", "spatial", "dual"] {
        let out = screenqa(&["grad-check", "--variant", v, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{v}: {}", String::from_utf8_lossy(&out.stderr));
        let report: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("gradcheck.json")).unwrap()).unwrap();
        assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-4);
    }
}
