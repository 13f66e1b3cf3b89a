use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use serde_json::{json, Value};

use screenqa::checkpoint::save_checkpoint;
use screenqa::corpus::{build_vocab, context_window, synth_dataset, SynthSpec};
use screenqa::fusion::{ModelConfig, QAModel, Variant};
use screenqa::kb::{answer_pool, save_kb};
use screenqa_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    kb: PathBuf,
    other_kb: PathBuf,
    checkpoint: PathBuf,
    model: QAModel,
    request: Value,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_videos: 2,
        sents_per_video: 10,
        kb_size: 12,
        n_triples: 6,
        ..SynthSpec::default()
    };
    let out = synth_dataset(&spec).unwrap();
    let vocab = build_vocab(&out.dataset, 1);
    let mut model = QAModel::new(
        ModelConfig::miniature(Variant::Dual),
        vocab,
        answer_pool(&out.kb),
        None,
        None,
    )
    .unwrap();
    model.jitter(0.1, 3);
    let kb = dir.path().join("kb.json");
    save_kb(&out.kb, &kb).unwrap();
    let other = synth_dataset(&SynthSpec { kb_size: 15, ..spec }).unwrap();
    let other_kb = dir.path().join("other_kb.json");
    save_kb(&other.kb, &other_kb).unwrap();
    let checkpoint = dir.path().join("model.json");
    save_checkpoint(&model, &checkpoint).unwrap();

    let window = context_window(&out.dataset, &out.dataset.triples[0], model.config.w);
    let steps: Vec<Value> = window
        .steps
        .iter()
        .map(|s| {
            if s.pad {
                Value::Null
            } else {
                json!({"tokens": s.tokens, "tool": s.cues.tool, "panel": s.cues.panel, "dialog": s.cues.dialog})
            }
        })
        .collect();
    let request = json!({"question": window.question_tokens, "steps": steps});
    Fixture {
        _dir: dir,
        kb,
        other_kb,
        checkpoint,
        model,
        request,
    }
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = tqa_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn open(f: &Fixture) -> (*mut TqaKb, *mut TqaEngine) {
    let mut kb = ptr::null_mut();
    assert_eq!(tqa_kb_load(cstr(&f.kb).as_ptr(), &mut kb), TqaStatus::Ok);
    let mut engine = ptr::null_mut();
    assert_eq!(
        tqa_engine_load(cstr(&f.checkpoint).as_ptr(), kb, &mut engine),
        TqaStatus::Ok
    );
    (kb, engine)
}

unsafe fn rank(engine: *const TqaEngine, request: &str) -> (TqaStatus, Option<Value>) {
    let req = CString::new(request).unwrap();
    let mut out = ptr::null_mut();
    let status = tqa_engine_rank(engine, req.as_ptr(), &mut out);
    if out.is_null() {
        return (status, None);
    }
    let v = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
    tqa_string_free(out);
    (status, Some(v))
}

#[test]
fn ranking_matches_the_library() {
    let f = fixture();
    unsafe {
        let (kb, engine) = open(&f);
        let mut n = 0usize;
        assert_eq!(tqa_kb_pool_size(kb, &mut n), TqaStatus::Ok);
        assert_eq!(n, f.model.pool.len());

        let (status, resp) = rank(engine, &f.request.to_string());
        assert_eq!(status, TqaStatus::Ok);
        let resp = resp.unwrap();
        let ranking = resp["ranking"].as_array().unwrap();
        assert_eq!(ranking.len(), n);

        let scores: Vec<f64> = ranking.iter().map(|r| r["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|p| p[0] >= p[1]), "ranking must be best first");
        assert!(resp["attention"]["temporal"].is_array());
        assert!(resp["attention"]["spatial"].is_array());

        tqa_engine_free(engine);
        tqa_kb_free(kb);
    }
}

#[test]
fn scores_are_bitwise_equal_to_a_direct_forward_pass() {
    let f = fixture();
    let steps = f.request["steps"].as_array().unwrap();
    let window = screenqa::corpus::ContextWindow {
        question_tokens: serde_json::from_value(f.request["question"].clone()).unwrap(),
        steps: steps
            .iter()
            .map(|s| screenqa::corpus::WindowStep {
                tokens: if s.is_null() {
                    Vec::new()
                } else {
                    serde_json::from_value(s["tokens"].clone()).unwrap()
                },
                cues: if s.is_null() {
                    Default::default()
                } else {
                    screenqa::corpus::CueAnnotation {
                        tool: s["tool"].as_str().map(String::from),
                        panel: s["panel"].as_str().map(String::from),
                        dialog: s["dialog"].as_str().map(String::from),
                    }
                },
                pad: s.is_null(),
                sentence: None,
            })
            .collect(),
    };
    let (scores, _) = f.model.forward(&window).unwrap();
    unsafe {
        let (kb, engine) = open(&f);
        let (_, resp) = rank(engine, &f.request.to_string());
        for r in resp.unwrap()["ranking"].as_array().unwrap() {
            let i = f.model.pool.index_of(r["id"].as_str().unwrap()).unwrap();
            assert_eq!(r["score"].as_f64().unwrap().to_bits(), scores[i].to_bits());
        }
        tqa_engine_free(engine);
        tqa_kb_free(kb);
    }
}

#[test]
fn top_k_truncates() {
    let f = fixture();
    let mut req = f.request.clone();
    req["top_k"] = json!(3);
    unsafe {
        let (kb, engine) = open(&f);
        let (status, resp) = rank(engine, &req.to_string());
        assert_eq!(status, TqaStatus::Ok);
        assert_eq!(resp.unwrap()["ranking"].as_array().unwrap().len(), 3);
        tqa_engine_free(engine);
        tqa_kb_free(kb);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let f = fixture();
    unsafe {
        let mut kb = ptr::null_mut();
        assert_eq!(tqa_kb_load(ptr::null(), &mut kb), TqaStatus::NullArgument);
        assert!(kb.is_null());
        assert!(last_error().contains("path"));

        let missing = cstr(&f.kb.with_file_name("absent.json"));
        assert_eq!(tqa_kb_load(missing.as_ptr(), &mut kb), TqaStatus::Io);

        let bad = [0xffu8, 0];
        assert_eq!(tqa_kb_load(bad.as_ptr().cast(), &mut kb), TqaStatus::InvalidUtf8);

        let mut other = ptr::null_mut();
        assert_eq!(tqa_kb_load(cstr(&f.other_kb).as_ptr(), &mut other), TqaStatus::Ok);
        let mut engine = ptr::null_mut();
        assert_eq!(
            tqa_engine_load(cstr(&f.checkpoint).as_ptr(), other, &mut engine),
            TqaStatus::CheckpointMismatch
        );
        assert!(engine.is_null());
        tqa_kb_free(other);

        let (kb, engine) = open(&f);
        assert_eq!(rank(engine, "{not json").0, TqaStatus::Parse);
        let short = json!({"question": ["x"], "steps": [null]});
        let (status, out) = rank(engine, &short.to_string());
        assert_eq!(status, TqaStatus::Invalid);
        assert!(out.is_none());
        assert!(!last_error().is_empty());
        assert_eq!(rank(ptr::null(), "{}").0, TqaStatus::NullArgument);

        tqa_engine_free(engine);
        tqa_kb_free(kb);
        tqa_kb_free(ptr::null_mut());
        tqa_engine_free(ptr::null_mut());
        tqa_string_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/screenqa.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tqa_kb_load",
        "tqa_kb_pool_size",
        "tqa_kb_free",
        "tqa_engine_load",
        "tqa_engine_rank",
        "tqa_engine_free",
        "tqa_string_free",
        "tqa_last_error_message",
        "TQA_STATUS_CHECKPOINT_MISMATCH",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(status.success());
}
