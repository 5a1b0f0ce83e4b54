//! C ABI over the scirforge retrieval index and metric primitives.
//!
//! Every fallible function returns an [`ScfStatus`]; on failure the message
//! is available from [`scf_last_error`] on the same thread. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`scf_string_free`]. Index handles are released with [`scf_index_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scirforge::evalqa::{diversity_index, rouge_l, LevelDistribution};
use scirforge::gateway::ScoredContinuation;
use scirforge::retrieval::{build_index, mrr_at, recall_at_k, Bm25Params, Index, IndexConfig, RankedList};
use scirforge::seper::answer_confidence;
use scirforge::types::{AnswerForm, AspectUnit, DatasetRecord, FilterVerdict, QuestionType};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Panic = 6,
}

/// Opaque BM25 index handle.
pub struct ScfIndex {
    inner: Index,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(ScfStatus, String);

impl From<scirforge::Error> for Failure {
    fn from(e: scirforge::Error) -> Self {
        use scirforge::Error as E;
        let status = match &e {
            E::Io { .. } => ScfStatus::Io,
            E::Json(_) | E::Parse { .. } | E::InvalidRecord(_) => ScfStatus::Parse,
            _ => ScfStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ScfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ScfStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(ScfStatus::InvalidArgument, msg.into())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on this thread; do not free.
#[no_mangle]
pub extern "C" fn scf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn scf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn scf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a BM25 index (k1 = 1.2, b = 0.75) from a datasets JSON Lines file
/// and, for the with-paper configuration, an aspects JSON Lines file
/// (`aspects_path` may be null).
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scf_index_build(
    datasets_path: *const c_char,
    aspects_path: *const c_char,
    with_paper: bool,
    out: *mut *mut ScfIndex,
) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let datasets: Vec<DatasetRecord> = scirforge::jsonl::read(Path::new(str_arg(datasets_path, "datasets_path")?))?;
        let aspects: Vec<AspectUnit> = if aspects_path.is_null() {
            Vec::new()
        } else {
            scirforge::jsonl::read(Path::new(str_arg(aspects_path, "aspects_path")?))?
        };
        let config = if with_paper {
            IndexConfig::WithPaper
        } else {
            IndexConfig::WithoutPaper
        };
        let inner = build_index(&datasets, &aspects, config, Bm25Params::default())?;
        *out = Box::into_raw(Box::new(ScfIndex { inner }));
        Ok(())
    })
}

/// Load an index written by the pipeline's `index` stage.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scf_index_load(path: *const c_char, out: *mut *mut ScfIndex) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = Path::new(str_arg(path, "path")?);
        let text = std::fs::read_to_string(p).map_err(|e| Failure(ScfStatus::Io, format!("{}: {e}", p.display())))?;
        let inner: Index = serde_json::from_str(&text).map_err(|e| Failure(ScfStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(ScfIndex { inner }));
        Ok(())
    })
}

/// Number of document units, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scf_index_unit_count(index: *const ScfIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// Rank datasets for `query`; writes a JSON array of
/// `{"dataset_id", "score"}` objects, best first, to `out_json`.
///
/// # Safety
/// `index` must be a live handle; `query` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn scf_index_search(
    index: *const ScfIndex,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> ScfStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let out = out_arg(out_json, "out_json")?;
        let ranked = index.inner.search(str_arg(query, "query")?, k)?;
        let json: Vec<_> = ranked
            .entries
            .iter()
            .map(|(d, s)| serde_json::json!({"dataset_id": d, "score": s}))
            .collect();
        let text = serde_json::to_string(&json).map_err(|e| invalid(e.to_string()))?;
        *out = CString::new(text).map_err(|e| invalid(e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Release an index handle. Null is ignored.
///
/// # Safety
/// `index` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn scf_index_free(index: *mut ScfIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// `exp(mean(logprobs))`; every logprob must be finite and <= 0.
///
/// # Safety
/// `logprobs` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn scf_answer_confidence(logprobs: *const f64, len: usize, out: *mut f64) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lps = slice_arg(logprobs, len, "logprobs")?;
        let scored = ScoredContinuation::new(vec![String::new(); lps.len()], lps.to_vec())?;
        *out = answer_confidence(&scored)?;
        Ok(())
    })
}

/// Belief shift `conf_with - conf_without` and whether it accepts.
///
/// # Safety
/// Out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn scf_filter_decide(
    conf_with: f64,
    conf_without: f64,
    out_delta: *mut f64,
    out_accept: *mut bool,
) -> ScfStatus {
    guard(|| {
        let delta = out_arg(out_delta, "out_delta")?;
        let accept = out_arg(out_accept, "out_accept")?;
        if !conf_with.is_finite() || !conf_without.is_finite() {
            return Err(invalid("confidences must be finite"));
        }
        let v = FilterVerdict::from_confidences(conf_with, conf_without);
        *delta = v.delta;
        *accept = v.accepted();
        Ok(())
    })
}

/// ROUGE-L precision, recall and F over lowercase alphanumeric tokens.
///
/// # Safety
/// Strings must be NUL-terminated; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn scf_rouge_l(
    prediction: *const c_char,
    reference: *const c_char,
    out_precision: *mut f64,
    out_recall: *mut f64,
    out_f: *mut f64,
) -> ScfStatus {
    guard(|| {
        let r = rouge_l(str_arg(prediction, "prediction")?, str_arg(reference, "reference")?);
        *out_arg(out_precision, "out_precision")? = r.precision;
        *out_arg(out_recall, "out_recall")? = r.recall;
        *out_arg(out_f, "out_f")? = r.f;
        Ok(())
    })
}

/// `1 - sum p_i^2` over six cognitive-level counts.
///
/// # Safety
/// `counts` must point to six integers.
#[no_mangle]
pub unsafe extern "C" fn scf_diversity_index(counts: *const u64, out: *mut f64) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let c = slice_arg(counts, 6, "counts")?;
        let mut dist = LevelDistribution::default();
        dist.counts.copy_from_slice(c);
        *out = diversity_index(&dist)?;
        Ok(())
    })
}

/// Runs described by the 1-based rank of their gold dataset; 0 = absent.
fn runs_from_ranks(ranks: &[usize]) -> Vec<(RankedList, String)> {
    ranks
        .iter()
        .map(|&r| {
            let mut entries: Vec<(String, f64)> = (1..r).map(|i| (format!("other-{i}"), 0.0)).collect();
            if r > 0 {
                entries.push(("gold".to_string(), 0.0));
            }
            (RankedList { entries }, "gold".to_string())
        })
        .collect()
}

/// Recall@k over runs given as gold ranks (1-based, 0 = not retrieved).
///
/// # Safety
/// `ranks` must point to `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn scf_recall_at_k(ranks: *const usize, n: usize, k: usize, out: *mut f64) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = recall_at_k(&runs_from_ranks(slice_arg(ranks, n, "ranks")?), k)?;
        Ok(())
    })
}

/// Mean reciprocal rank with a cutoff, over gold ranks as in
/// [`scf_recall_at_k`].
///
/// # Safety
/// `ranks` must point to `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn scf_mrr_at(ranks: *const usize, n: usize, cutoff: usize, out: *mut f64) -> ScfStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = mrr_at(&runs_from_ranks(slice_arg(ranks, n, "ranks")?), cutoff)?;
        Ok(())
    })
}

/// Whether a question type (e.g. "Causal Antecedent") takes long-form
/// answers.
///
/// # Safety
/// `type_name` must be NUL-terminated; `out_is_long` writable.
#[no_mangle]
pub unsafe extern "C" fn scf_answer_form_is_long(type_name: *const c_char, out_is_long: *mut bool) -> ScfStatus {
    guard(|| {
        let out = out_arg(out_is_long, "out_is_long")?;
        let name = str_arg(type_name, "type_name")?;
        let t = QuestionType::from_name(name).ok_or_else(|| invalid(format!("unknown question type `{name}`")))?;
        *out = t.answer_form() == AnswerForm::Long;
        Ok(())
    })
}
