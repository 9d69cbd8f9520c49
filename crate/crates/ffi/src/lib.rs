//! C ABI over the sciclaim library.
//!
//! Every fallible entry point returns a [`SciclaimStatus`]; on failure a
//! message is available from [`sciclaim_last_error`] on the same thread.
//! Structured results are returned as NUL-terminated JSON strings owned by
//! the caller and released with [`sciclaim_string_free`]. Handles are opaque
//! and released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;
use std::time::Duration;

use sciclaim::eval::{krippendorff_alpha, rouge, AlphaMetric, EvalError};
use sciclaim::gateway::{
    CharTrigramModel, EchoGenerator, Gateway, GatewayConfig, HttpBackend, NliBackend, ScoreError, TableNli,
};
use sciclaim::kb::{load_kb, load_vectors, KbError, KnowledgeBase, VectorTable};
use sciclaim::kbin::{get_negation, random_entity_baseline, KbinConfig, KbinError};
use sciclaim::linker::linked_mentions;
use sciclaim::TypeMatch;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SciclaimStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    NotFound = 6,
    NoLinkableEntity = 7,
    NoCandidates = 8,
    Backend = 9,
    InsufficientData = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SciclaimAlphaMetric {
    Nominal = 0,
    Ordinal = 1,
    Interval = 2,
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SciclaimRouge {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

/// Loaded concept knowledge base.
pub struct SciclaimKb {
    kb: KnowledgeBase,
}

/// Loaded concept embedding table.
pub struct SciclaimVectors {
    vectors: VectorTable,
}

/// Perplexity, NLI and generation backends.
pub struct SciclaimScorers {
    gateway: Gateway,
}

struct Failure {
    status: SciclaimStatus,
    message: String,
}

impl Failure {
    fn new(status: SciclaimStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<KbError> for Failure {
    fn from(e: KbError) -> Self {
        let status = match &e {
            KbError::Io { .. } => SciclaimStatus::Io,
            KbError::MalformedRecord { .. } | KbError::DuplicateCui(_) | KbError::ZeroVector(_) => {
                SciclaimStatus::Parse
            }
            KbError::UnknownCui(_) | KbError::MissingVector(_) => SciclaimStatus::NotFound,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<ScoreError> for Failure {
    fn from(e: ScoreError) -> Self {
        let status = match e {
            ScoreError::InvalidInput(_) => SciclaimStatus::InvalidArgument,
            _ => SciclaimStatus::Backend,
        };
        Failure::new(status, e.to_string())
    }
}

impl From<KbinError> for Failure {
    fn from(e: KbinError) -> Self {
        match e {
            KbinError::Kb(e) => e.into(),
            KbinError::Score(e) => e.into(),
            KbinError::NoLinkableEntity => Failure::new(SciclaimStatus::NoLinkableEntity, e.to_string()),
            KbinError::NoCandidates | KbinError::NoSameTypeConcept => {
                Failure::new(SciclaimStatus::NoCandidates, e.to_string())
            }
            _ => Failure::new(SciclaimStatus::InvalidArgument, e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let status = match e {
            EvalError::InsufficientData(_) => SciclaimStatus::InsufficientData,
            _ => SciclaimStatus::InvalidArgument,
        };
        Failure::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Run `f`, translating errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SciclaimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SciclaimStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            SciclaimStatus::Panic
        }
    }
}

/// Borrow a C string argument as UTF-8.
///
/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn arg_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SciclaimStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SciclaimStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// # Safety
/// `p` is null or points to a live value of `T`.
unsafe fn arg_ref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(SciclaimStatus::NullArgument, format!("{name} is null")))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(SciclaimStatus::NullArgument, "output pointer is null"));
    }
    Ok(())
}

/// # Safety
/// `out` is non-null and writable.
unsafe fn write_json<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> Result<(), Failure> {
    let s = serde_json::to_string(value).map_err(|e| Failure::new(SciclaimStatus::Parse, e.to_string()))?;
    let c = CString::new(s).map_err(|e| Failure::new(SciclaimStatus::Parse, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sciclaim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn sciclaim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` is NULL or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a concept knowledge base from a JSON-lines file.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_kb_load(path: *const c_char, out: *mut *mut SciclaimKb) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        let path = arg_str(path, "path")?;
        let kb = load_kb(Path::new(path))?;
        *out = Box::into_raw(Box::new(SciclaimKb { kb }));
        Ok(())
    })
}

/// Number of concepts in the knowledge base; 0 for NULL.
///
/// # Safety
/// `kb` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_kb_len(kb: *const SciclaimKb) -> usize {
    kb.as_ref().map_or(0, |k| k.kb.len())
}

/// # Safety
/// `kb` is NULL or a handle from [`sciclaim_kb_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_kb_free(kb: *mut SciclaimKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Load concept vectors from a CSV file (`cui,v1,...,vd`).
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_vectors_load(
    path: *const c_char,
    out: *mut *mut SciclaimVectors,
) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        let path = arg_str(path, "path")?;
        let vectors = load_vectors(Path::new(path))?;
        *out = Box::into_raw(Box::new(SciclaimVectors { vectors }));
        Ok(())
    })
}

/// Embedding dimension; 0 for NULL.
///
/// # Safety
/// `v` is NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_vectors_dim(v: *const SciclaimVectors) -> usize {
    v.as_ref().map_or(0, |v| v.vectors.dim())
}

/// # Safety
/// `v` is NULL or a handle from [`sciclaim_vectors_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_vectors_free(v: *mut SciclaimVectors) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// In-process scorers: a character trigram perplexity model trained on the
/// lines of `ppl_corpus_path`, NLI from `nli_table_path` (JSON lines; NULL
/// for uniform probabilities) and the echo generator.
///
/// # Safety
/// `ppl_corpus_path` is a NUL-terminated string; `nli_table_path` is NULL
/// or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_scorers_local(
    ppl_corpus_path: *const c_char,
    nli_table_path: *const c_char,
    out: *mut *mut SciclaimScorers,
) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        let corpus_path = arg_str(ppl_corpus_path, "ppl_corpus_path")?;
        let corpus = std::fs::read_to_string(corpus_path)
            .map_err(|e| Failure::new(SciclaimStatus::Io, format!("{corpus_path}: {e}")))?;
        let nli: Arc<dyn NliBackend> = if nli_table_path.is_null() {
            Arc::new(TableNli::default())
        } else {
            let p = arg_str(nli_table_path, "nli_table_path")?;
            Arc::new(TableNli::from_jsonl(Path::new(p)).map_err(|e| Failure::new(SciclaimStatus::Parse, e.to_string()))?)
        };
        let gateway = Gateway::new(
            Arc::new(CharTrigramModel::train(corpus.lines())),
            nli,
            Arc::new(EchoGenerator::default()),
            GatewayConfig::default(),
        );
        *out = Box::into_raw(Box::new(SciclaimScorers { gateway }));
        Ok(())
    })
}

/// Scorers served over HTTP at `base_url` (`/v1/perplexity`, `/v1/nli`,
/// `/v1/generate`).
///
/// # Safety
/// `base_url` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_scorers_http(
    base_url: *const c_char,
    timeout_ms: u64,
    out: *mut *mut SciclaimScorers,
) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        let url = arg_str(base_url, "base_url")?;
        if timeout_ms == 0 {
            return Err(Failure::new(SciclaimStatus::InvalidArgument, "timeout_ms must be positive"));
        }
        let backend = Arc::new(HttpBackend::new(url, Duration::from_millis(timeout_ms)));
        let config = GatewayConfig {
            timeout_ms,
            ..GatewayConfig::default()
        };
        let gateway = Gateway::new(backend.clone(), backend.clone(), backend, config);
        *out = Box::into_raw(Box::new(SciclaimScorers { gateway }));
        Ok(())
    })
}

/// # Safety
/// `s` is NULL or a scorer handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_scorers_free(s: *mut SciclaimScorers) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Linked entity mentions in `text` as a JSON array.
///
/// # Safety
/// `kb` is a live handle; `text` is a NUL-terminated string; `out_json` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_link(
    kb: *const SciclaimKb,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> SciclaimStatus {
    guard(|| {
        check_out(out_json)?;
        let kb = arg_ref(kb, "kb")?;
        let text = arg_str(text, "text")?;
        write_json(&linked_mentions(&kb.kb, text), out_json)
    })
}

/// Knowledge-base informed negation of `claim`, as a JSON object, using the
/// `top_n` nearest same-type siblings of each linked entity.
///
/// # Safety
/// Handles are live; `claim` is a NUL-terminated string; `out_json` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_negate(
    kb: *const SciclaimKb,
    vectors: *const SciclaimVectors,
    scorers: *const SciclaimScorers,
    claim: *const c_char,
    top_n: usize,
    out_json: *mut *mut c_char,
) -> SciclaimStatus {
    guard(|| {
        check_out(out_json)?;
        let kb = arg_ref(kb, "kb")?;
        let vectors = arg_ref(vectors, "vectors")?;
        let scorers = arg_ref(scorers, "scorers")?;
        let claim = arg_str(claim, "claim")?;
        if top_n == 0 {
            return Err(Failure::new(SciclaimStatus::InvalidArgument, "top_n must be positive"));
        }
        let cfg = KbinConfig {
            top_n_concepts: top_n,
            ..KbinConfig::default()
        };
        let c = get_negation(&kb.kb, &vectors.vectors, &scorers.gateway, claim, &cfg)?;
        write_json(&c, out_json)
    })
}

/// Random same-type entity replacement baseline, as a JSON object.
///
/// # Safety
/// `kb` is a live handle; `claim` is a NUL-terminated string; `out_json`
/// is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_random_negation(
    kb: *const SciclaimKb,
    claim: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> SciclaimStatus {
    guard(|| {
        check_out(out_json)?;
        let kb = arg_ref(kb, "kb")?;
        let claim = arg_str(claim, "claim")?;
        let c = random_entity_baseline(&kb.kb, claim, seed, TypeMatch::Intersect)?;
        write_json(&c, out_json)
    })
}

/// ROUGE F1 scores of `candidate` against `reference`.
///
/// # Safety
/// Both strings are NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_rouge(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut SciclaimRouge,
) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        let s = rouge(arg_str(candidate, "candidate")?, arg_str(reference, "reference")?)?;
        *out = SciclaimRouge {
            r1: s.r1,
            r2: s.r2,
            rl: s.rl,
        };
        Ok(())
    })
}

/// Krippendorff's alpha over a row-major `raters` x `items` matrix; NaN
/// marks a missing rating.
///
/// # Safety
/// `ratings` points to `raters * items` readable doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sciclaim_alpha(
    ratings: *const f64,
    raters: usize,
    items: usize,
    metric: SciclaimAlphaMetric,
    out: *mut f64,
) -> SciclaimStatus {
    guard(|| {
        check_out(out)?;
        if ratings.is_null() {
            return Err(Failure::new(SciclaimStatus::NullArgument, "ratings is null"));
        }
        let len = raters
            .checked_mul(items)
            .ok_or_else(|| Failure::new(SciclaimStatus::InvalidArgument, "matrix too large"))?;
        let cells = std::slice::from_raw_parts(ratings, len);
        let matrix: Vec<Vec<Option<f64>>> = if items == 0 {
            vec![Vec::new(); raters]
        } else {
            cells
                .chunks(items)
                .map(|row| row.iter().map(|v| (!v.is_nan()).then_some(*v)).collect())
                .collect()
        };
        let metric = match metric {
            SciclaimAlphaMetric::Nominal => AlphaMetric::Nominal,
            SciclaimAlphaMetric::Ordinal => AlphaMetric::Ordinal,
            SciclaimAlphaMetric::Interval => AlphaMetric::Interval,
        };
        *out = krippendorff_alpha(&matrix, metric)?.value;
        Ok(())
    })
}
