//! C ABI over the screenqa ranking engine.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every call returns a [`TqaStatus`]; on failure
//! [`tqa_last_error_message`] describes the error for the calling thread.
//! Strings handed out by the library must be released with
//! [`tqa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use serde::{Deserialize, Serialize};

use screenqa::corpus::{ContextWindow, CueAnnotation, WindowStep};
use screenqa::fusion::{AttentionTrace, QAModel};
use screenqa::kb::{answer_pool, load_kb, KnowledgeBase};
use screenqa::{checkpoint, Error};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TqaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Invalid = 5,
    CheckpointMismatch = 6,
    Panic = 7,
}

/// A loaded knowledge base.
pub struct TqaKb {
    kb: KnowledgeBase,
}

/// A trained model bound to the knowledge base it was trained against.
pub struct TqaEngine {
    model: QAModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(TqaStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } => TqaStatus::Io,
            Error::Parse { .. } => TqaStatus::Parse,
            Error::CheckpointMismatch(_) => TqaStatus::CheckpointMismatch,
            _ => TqaStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TqaStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(TqaStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => TqaStatus::Ok,
        Err(Failure(status, msg)) => {
            set_error(msg);
            status
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(TqaStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TqaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(TqaStatus::NullArgument, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(TqaStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// One window step of a ranking request; `null` marks a pad past either
/// end of the video.
#[derive(Debug, Deserialize)]
struct StepRequest {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    tool: Option<String>,
    #[serde(default)]
    panel: Option<String>,
    #[serde(default)]
    dialog: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RankRequest {
    question: Vec<String>,
    steps: Vec<Option<StepRequest>>,
    #[serde(default)]
    top_k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Ranked<'a> {
    id: &'a str,
    score: f64,
}

#[derive(Debug, Serialize)]
struct RankResponse<'a> {
    ranking: Vec<Ranked<'a>>,
    attention: AttentionTrace,
}

impl RankRequest {
    fn window(self) -> ContextWindow {
        let steps = self
            .steps
            .into_iter()
            .map(|s| match s {
                None => WindowStep {
                    tokens: Vec::new(),
                    cues: CueAnnotation::default(),
                    pad: true,
                    sentence: None,
                },
                Some(s) => WindowStep {
                    tokens: s.tokens,
                    cues: CueAnnotation {
                        tool: s.tool,
                        panel: s.panel,
                        dialog: s.dialog,
                    },
                    pad: false,
                    sentence: None,
                },
            })
            .collect();
        ContextWindow {
            question_tokens: self.question,
            steps,
        }
    }
}

fn rank_json(model: &QAModel, request: &str) -> Result<String, Failure> {
    let req: RankRequest = serde_json::from_str(request)
        .map_err(|e| Failure(TqaStatus::Parse, format!("rank request: {e}")))?;
    let top_k = req.top_k;
    let (scores, attention) = model.forward(&req.window())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Highest score first; ties keep pool order.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_k.unwrap_or(order.len()));
    let ids = model.pool.ids();
    let response = RankResponse {
        ranking: order
            .into_iter()
            .map(|i| Ranked {
                id: &ids[i],
                score: scores[i],
            })
            .collect(),
        attention,
    };
    Ok(serde_json::to_string(&response).expect("response serialises"))
}

/// Loads a knowledge base from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tqa_kb_load(path: *const c_char, out: *mut *mut TqaKb) -> TqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let kb = load_kb(Path::new(path))?;
        *out = Box::into_raw(Box::new(TqaKb { kb }));
        Ok(())
    })
}

/// Number of candidate answers the knowledge base offers.
///
/// # Safety
/// `kb` must come from [`tqa_kb_load`] and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tqa_kb_pool_size(kb: *const TqaKb, out: *mut usize) -> TqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let kb = ref_arg(kb, "kb")?;
        *out = answer_pool(&kb.kb).len();
        Ok(())
    })
}

/// # Safety
/// `kb` must come from [`tqa_kb_load`] and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn tqa_kb_free(kb: *mut TqaKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Loads a checkpoint. The knowledge base's answer pool must match the one
/// the model was trained on; the engine does not keep a reference to `kb`.
///
/// # Safety
/// `checkpoint_path` must be a NUL-terminated string, `kb` a live handle and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tqa_engine_load(
    checkpoint_path: *const c_char,
    kb: *const TqaKb,
    out: *mut *mut TqaEngine,
) -> TqaStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(checkpoint_path, "checkpoint_path")?;
        let kb = ref_arg(kb, "kb")?;
        let model = checkpoint::load_checkpoint(Path::new(path), Some(&kb.kb))?;
        *out = Box::into_raw(Box::new(TqaEngine { model }));
        Ok(())
    })
}

/// Ranks the answer pool for one question.
///
/// The request is a JSON object
/// `{"question": [tokens], "steps": [step or null, ...], "top_k": n}` with
/// `2w+1` steps centred on the question's sentence, each step
/// `{"tokens": [...], "tool": id, "panel": id, "dialog": id}`. The response is
/// `{"ranking": [{"id", "score"}, ...], "attention": {...}}`, best first.
///
/// # Safety
/// `engine` must be a live handle, `request_json` a NUL-terminated string and
/// `out_json` writable. The returned string belongs to the caller.
#[no_mangle]
pub unsafe extern "C" fn tqa_engine_rank(
    engine: *const TqaEngine,
    request_json: *const c_char,
    out_json: *mut *mut c_char,
) -> TqaStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let engine = ref_arg(engine, "engine")?;
        let request = str_arg(request_json, "request_json")?;
        let text = rank_json(&engine.model, request)?;
        *out_json = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`tqa_engine_load`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn tqa_engine_free(engine: *mut TqaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// # Safety
/// `s` must be a string returned by this library, released once. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn tqa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tqa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
