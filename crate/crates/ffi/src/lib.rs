//! C ABI over `openavs-core`.
//!
//! Every fallible function returns an [`OpenavsStatus`]. On failure the
//! message is available from [`openavs_last_error`] on the same thread until
//! the next call. Strings handed out through `out` parameters are owned by
//! the caller and must be released with [`openavs_string_free`]. Handles are
//! released with their `_free` function; freeing NULL is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use openavs_core::clients::AgentClients;
use openavs_core::config::PipelineConfig;
use openavs_core::cost::{cost_usd, CostError, PriceTable};
use openavs_core::dataset;
use openavs_core::eval;
use openavs_core::model::{AgentKind, BinaryMask, Description, KnowledgeBank, LabelGrid, TokenUsage, Variant};
use openavs_core::orchestrator::Orchestrator;
use openavs_core::prompt::{self, PromptError, TranslatorMode};
use openavs_core::runner::{self, RunOptions};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpenavsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ShapeMismatch = 4,
    NoAnswerTags = 5,
    UnknownModel = 6,
    Io = 7,
    Pipeline = 8,
    Overflow = 9,
    Panic = 10,
}

/// Knowledge bank handle.
pub struct OpenavsBank(KnowledgeBank);

/// Configured pipeline with its own runtime.
pub struct OpenavsPipeline {
    runtime: tokio::runtime::Runtime,
    orchestrator: Orchestrator,
}

type Fail = (OpenavsStatus, String);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OpenavsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OpenavsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            OpenavsStatus::Panic
        }
    }
}

fn invalid(msg: impl ToString) -> Fail {
    (OpenavsStatus::InvalidArgument, msg.to_string())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err((OpenavsStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (OpenavsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err((OpenavsStatus::NullPointer, "out is NULL".into()));
    }
    let c = CString::new(s).map_err(|_| invalid("result contains a NUL byte"))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err((OpenavsStatus::NullPointer, "out is NULL".into()));
    }
    *out = v;
    Ok(())
}

unsafe fn mask(bits: *const u8, height: u32, width: u32, what: &str) -> Result<BinaryMask, Fail> {
    if bits.is_null() {
        return Err((OpenavsStatus::NullPointer, format!("{what} is NULL")));
    }
    let n = height as usize * width as usize;
    let data = std::slice::from_raw_parts(bits, n).to_vec();
    BinaryMask::from_bits(height, width, data).map_err(|e| invalid(format!("{what}: {e}")))
}

unsafe fn bank_ref<'a>(bank: *const OpenavsBank) -> Result<&'a OpenavsBank, Fail> {
    bank.as_ref()
        .ok_or((OpenavsStatus::NullPointer, "bank is NULL".to_string()))
}

fn prompt_fail(e: PromptError) -> Fail {
    match e {
        PromptError::NoAnswerTags => (OpenavsStatus::NoAnswerTags, e.to_string()),
        other => invalid(other),
    }
}

/// Message of the last failure on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn openavs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn openavs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// mIoU of two row-major 0/1 masks of `height * width` bytes.
///
/// # Safety
/// `pred` and `gt` must point to `height * width` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn openavs_miou(
    pred: *const u8,
    gt: *const u8,
    height: u32,
    width: u32,
    out: *mut f64,
) -> OpenavsStatus {
    guard(|| {
        let (p, g) = (mask(pred, height, width, "pred")?, mask(gt, height, width, "gt")?);
        let v = eval::miou(&p, &g).map_err(|e| (OpenavsStatus::ShapeMismatch, e.to_string()))?;
        put(out, v)
    })
}

/// F-score with the given beta squared (0.3 is the usual choice).
///
/// # Safety
/// As [`openavs_miou`].
#[no_mangle]
pub unsafe extern "C" fn openavs_fscore(
    pred: *const u8,
    gt: *const u8,
    height: u32,
    width: u32,
    beta2: f64,
    out: *mut f64,
) -> OpenavsStatus {
    guard(|| {
        if !(beta2 > 0.0 && beta2.is_finite()) {
            return Err(invalid("beta2 must be positive"));
        }
        let (p, g) = (mask(pred, height, width, "pred")?, mask(gt, height, width, "gt")?);
        let v = eval::fscore(&p, &g, beta2).map_err(|e| (OpenavsStatus::ShapeMismatch, e.to_string()))?;
        put(out, v)
    })
}

/// Writes `min(label, 1)` for each of the `height * width` labels.
///
/// # Safety
/// `labels` must hold `height * width` values and `out` as many bytes.
#[no_mangle]
pub unsafe extern "C" fn openavs_binarize_semantic(
    labels: *const u32,
    height: u32,
    width: u32,
    out: *mut u8,
) -> OpenavsStatus {
    guard(|| {
        if labels.is_null() || out.is_null() {
            return Err((OpenavsStatus::NullPointer, "labels or out is NULL".into()));
        }
        let n = height as usize * width as usize;
        let grid = LabelGrid {
            height,
            width,
            labels: std::slice::from_raw_parts(labels, n).to_vec(),
        };
        let m = eval::binarize_semantic(&grid).map_err(invalid)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(m.bits());
        Ok(())
    })
}

/// Translator system prompt for `mode` (basic, prompt, frame, prompt+frame, model).
///
/// # Safety
/// `mode` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_system_prompt(mode: *const c_char, out: *mut *mut c_char) -> OpenavsStatus {
    guard(|| {
        let mode: TranslatorMode = text(mode, "mode")?.parse().map_err(invalid)?;
        put_string(out, prompt::translator_system_prompt(mode))
    })
}

/// # Safety
/// `video_id` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_new(video_id: *const c_char, out: *mut *mut OpenavsBank) -> OpenavsStatus {
    guard(|| {
        let id = text(video_id, "video_id")?;
        let handle = Box::into_raw(Box::new(OpenavsBank(KnowledgeBank::new(id))));
        put(out, handle)
    })
}

/// # Safety
/// `bank` must come from [`openavs_bank_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_free(bank: *mut OpenavsBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Adds one description. `kind` is e.g. `audio_describer`.
///
/// # Safety
/// `bank` must be live; string arguments NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_insert(
    bank: *mut OpenavsBank,
    frame_index: usize,
    kind: *const c_char,
    model_id: *const c_char,
    prompt_variant: usize,
    description: *const c_char,
) -> OpenavsStatus {
    guard(|| {
        let bank = bank
            .as_mut()
            .ok_or((OpenavsStatus::NullPointer, "bank is NULL".to_string()))?;
        let kind: AgentKind = text(kind, "kind")?.parse().map_err(invalid)?;
        let model = text(model_id, "model_id")?;
        let body = text(description, "description")?;
        let d = Description::new(bank.0.video_id(), frame_index, kind, model, prompt_variant, body);
        bank.0.insert(d).map_err(invalid)
    })
}

/// Number of descriptions, or 0 for NULL.
///
/// # Safety
/// `bank` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_len(bank: *const OpenavsBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

/// Frame-tagged translator input for the first `n_frames` frames.
///
/// # Safety
/// `bank` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_frame_input(
    bank: *const OpenavsBank,
    n_frames: usize,
    use_exp_tags: bool,
    out: *mut *mut c_char,
) -> OpenavsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        let s = prompt::frame_tagged_user_input(&bank.0, n_frames, use_exp_tags).map_err(prompt_fail)?;
        put_string(out, s)
    })
}

/// Model-consistency translator input for one frame.
///
/// # Safety
/// `bank` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_model_input(
    bank: *const OpenavsBank,
    frame_index: usize,
    out: *mut *mut c_char,
) -> OpenavsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        let s = prompt::model_consistency_user_input(&bank.0, frame_index).map_err(prompt_fail)?;
        put_string(out, s)
    })
}

/// # Safety
/// `bank` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_bank_to_json(bank: *const OpenavsBank, out: *mut *mut c_char) -> OpenavsStatus {
    guard(|| {
        let bank = bank_ref(bank)?;
        put_string(out, serde_json::to_string(&bank.0).map_err(invalid)?)
    })
}

/// Parses a frame-tagged translator reply into JSON
/// `{"directives": [...], "warnings": [...]}` with exactly `n_frames`
/// directives. Returns `NO_ANSWER_TAGS` when the reply has no answer span.
///
/// # Safety
/// String arguments NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_parse_answers(
    reply: *const c_char,
    n_frames: usize,
    video_id: *const c_char,
    out: *mut *mut c_char,
) -> OpenavsStatus {
    guard(|| {
        let reply = text(reply, "reply")?;
        let id = text(video_id, "video_id")?;
        if n_frames == 0 {
            return Err(invalid("n_frames must be at least 1"));
        }
        let parsed = prompt::parse_frame_answers(reply, n_frames, id).map_err(prompt_fail)?;
        let json = serde_json::json!({"directives": parsed.directives, "warnings": parsed.warnings});
        put_string(out, json.to_string())
    })
}

/// Cost of one call under the default price table, in pico-dollars
/// (1e-12 USD). `out_usd`, if not NULL, receives the amount rounded to
/// six decimals.
///
/// # Safety
/// `model_id` NUL-terminated; `out_pico` writable; `out_usd` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn openavs_cost(
    model_id: *const c_char,
    prompt_tokens: u64,
    completion_tokens: u64,
    out_pico: *mut u64,
    out_usd: *mut *mut c_char,
) -> OpenavsStatus {
    guard(|| {
        let model = text(model_id, "model_id")?;
        let usage = TokenUsage::new(model, prompt_tokens, completion_tokens);
        let usd = cost_usd(&usage, &PriceTable::default()).map_err(|e| match e {
            CostError::UnknownModel(_) => (OpenavsStatus::UnknownModel, e.to_string()),
            other => invalid(other),
        })?;
        let pico = u64::try_from(usd.pico()).map_err(|_| (OpenavsStatus::Overflow, "cost exceeds u64 pico-dollars".into()))?;
        put(out_pico, pico)?;
        if !out_usd.is_null() {
            put_string(out_usd, usd.to_fixed6())?;
        }
        Ok(())
    })
}

/// Builds a pipeline. Each argument may be NULL: `config_path` falls back to
/// defaults, `variant` (lite, standard, large) to the config's, and
/// `endpoint` replaces every agent endpoint (`mock://derived` for the
/// in-process mock).
///
/// # Safety
/// Non-NULL strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn openavs_pipeline_new(
    config_path: *const c_char,
    variant: *const c_char,
    endpoint: *const c_char,
    out: *mut *mut OpenavsPipeline,
) -> OpenavsStatus {
    guard(|| {
        let variant: Option<Variant> = optional_text(variant, "variant")?
            .map(str::parse)
            .transpose()
            .map_err(invalid)?;
        let mut cfg = match optional_text(config_path, "config_path")? {
            Some(p) => {
                let mut c = PipelineConfig::load(Path::new(p)).map_err(invalid)?;
                if let Some(v) = variant {
                    c.pipeline.variant = v;
                }
                c
            }
            None => PipelineConfig::for_variant(variant.unwrap_or(Variant::Lite)),
        };
        if let Some(url) = optional_text(endpoint, "endpoint")? {
            cfg.endpoints.set_all(url);
        }
        cfg.validate().map_err(invalid)?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| (OpenavsStatus::Io, e.to_string()))?;
        let orchestrator = {
            let _enter = runtime.enter();
            let clients = AgentClients::from_config(&cfg, None).map_err(invalid)?;
            Orchestrator::new(cfg, clients).map_err(invalid)?
        };
        put(out, Box::into_raw(Box::new(OpenavsPipeline { runtime, orchestrator })))
    })
}

/// # Safety
/// `pipeline` must come from [`openavs_pipeline_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn openavs_pipeline_free(pipeline: *mut OpenavsPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Runs every clip of `manifest_path`, writing masks under `out_dir`.
/// `workers` of 0 uses the configured count. The run summary is returned as
/// JSON; clip failures are listed there and still return `OK`.
///
/// # Safety
/// `pipeline` live; strings NUL-terminated; `out_summary` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn openavs_pipeline_run(
    pipeline: *const OpenavsPipeline,
    manifest_path: *const c_char,
    out_dir: *const c_char,
    workers: usize,
    out_summary: *mut *mut c_char,
) -> OpenavsStatus {
    guard(|| {
        let p = pipeline
            .as_ref()
            .ok_or((OpenavsStatus::NullPointer, "pipeline is NULL".to_string()))?;
        let manifest = dataset::load_manifest(Path::new(text(manifest_path, "manifest_path")?))
            .map_err(|e| (OpenavsStatus::Io, e.to_string()))?;
        let opts = RunOptions {
            out: text(out_dir, "out_dir")?.into(),
            overlay: false,
            workers: if workers == 0 {
                p.orchestrator.config().workers()
            } else {
                workers
            },
        };
        let summary = p
            .runtime
            .block_on(runner::run_dataset(&p.orchestrator, &manifest, &opts))
            .map_err(|e| (OpenavsStatus::Pipeline, e.to_string()))?;
        if !out_summary.is_null() {
            put_string(out_summary, serde_json::to_string(&summary).map_err(invalid)?)?;
        }
        Ok(())
    })
}
