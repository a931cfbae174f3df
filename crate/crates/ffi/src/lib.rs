//! C ABI over the pieces of `ehfkt` that are useful from other languages:
//! rank AUC, the BKT update, average-linkage clustering and tracer
//! prediction from a saved checkpoint.
//!
//! Every function returns an [`EhfStatus`]. On failure the message is kept
//! per thread and read with [`ehf_last_error`]. Handles are created by
//! `*_new`/`*_load` and released by the matching `*_free`; freeing NULL is a
//! no-op. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ehfkt::bkt::{bkt_predict_update, BktTagParams};
use ehfkt::dataio::{load_checkpoint, load_corpus};
use ehfkt::error::Error;
use ehfkt::evalkit::auc;
use ehfkt::sfes::{agglomerate, cut_labels, Dendrogram};
use ehfkt::tracer::{predict_next, FeatureTable, TracerParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EhfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Numerical = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EhfStatus {
    match e {
        Error::Io { .. } => EhfStatus::Io,
        Error::Format { .. } | Error::Json(_) => EhfStatus::Format,
        Error::Numerical(_) => EhfStatus::Numerical,
        _ => EhfStatus::InvalidArgument,
    }
}

/// Run `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), EhfStatusError>) -> EhfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EhfStatus::Ok,
        Ok(Err(EhfStatusError(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EhfStatus::Panic
        }
    }
}

struct EhfStatusError(EhfStatus, String);

impl From<Error> for EhfStatusError {
    fn from(e: Error) -> Self {
        EhfStatusError(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> EhfStatusError {
    EhfStatusError(EhfStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> EhfStatusError {
    EhfStatusError(EhfStatus::InvalidArgument, msg.into())
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], EhfStatusError> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, EhfStatusError> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string(p: *const c_char, what: &str) -> Result<String, EhfStatusError> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn opt_path(p: *const c_char, what: &str) -> Result<Option<PathBuf>, EhfStatusError> {
    if p.is_null() {
        Ok(None)
    } else {
        string(p, what).map(|s| Some(PathBuf::from(s)))
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next `ehf_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ehf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// NUL-terminated library version; static storage.
#[no_mangle]
pub extern "C" fn ehf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Rank AUC of `n` scores against 0/1 labels, ties counted half.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements; `out` to one
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn ehf_auc(scores: *const f64, labels: *const u8, n: usize, out_auc: *mut f64) -> EhfStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        let o = out(out_auc, "out_auc")?;
        *o = auc(s, l)?;
        Ok(())
    })
}

/// Per-tag BKT parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EhfBktParams {
    pub p_init: f64,
    pub p_learn: f64,
    pub p_guess: f64,
    pub p_slip: f64,
}

/// One BKT step: the probability of a correct answer at mastery
/// `p_mastery`, then the mastery after observing `r` and the learning
/// transition.
///
/// # Safety
/// `params` must be readable; `p_correct` and `p_next` writable.
#[no_mangle]
pub unsafe extern "C" fn ehf_bkt_predict_update(
    params: *const EhfBktParams,
    p_mastery: f64,
    r: u8,
    p_correct: *mut f64,
    p_next: *mut f64,
) -> EhfStatus {
    guard(|| {
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        let tp = BktTagParams {
            p_init: p.p_init,
            p_learn: p.p_learn,
            p_guess: p.p_guess,
            p_slip: p.p_slip,
        };
        tp.validate()?;
        if !(0.0..=1.0).contains(&p_mastery) {
            return Err(invalid(format!("p_mastery {p_mastery} outside [0, 1]")));
        }
        if r > 1 {
            return Err(invalid(format!("r must be 0 or 1, got {r}")));
        }
        let (pc, next) = bkt_predict_update(&tp, p_mastery, r);
        *out(p_correct, "p_correct")? = pc;
        *out(p_next, "p_next")? = next;
        Ok(())
    })
}

/// Average-linkage dendrogram over cosine distance.
pub struct EhfDendrogram {
    inner: Dendrogram,
}

/// Cluster `n` row vectors of length `dim` stored row-major in `vectors`.
///
/// # Safety
/// `vectors` must hold `n * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ehf_dendrogram_new(
    vectors: *const f64,
    n: usize,
    dim: usize,
    out_handle: *mut *mut EhfDendrogram,
) -> EhfStatus {
    guard(|| {
        let o = out(out_handle, "out_handle")?;
        *o = ptr::null_mut();
        if n == 0 || dim == 0 {
            return Err(invalid("need at least one vector of positive dimension"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let data = slice(vectors, len, "vectors")?;
        let rows: Vec<Vec<f64>> = data.chunks(dim).map(<[f64]>::to_vec).collect();
        let ids = (0..n).map(|i| i.to_string()).collect();
        let d = agglomerate(ids, &rows)?;
        *o = Box::into_raw(Box::new(EhfDendrogram { inner: d }));
        Ok(())
    })
}

/// Number of merges (`n - 1`).
///
/// # Safety
/// `handle` must come from `ehf_dendrogram_new`.
#[no_mangle]
pub unsafe extern "C" fn ehf_dendrogram_num_merges(handle: *const EhfDendrogram, out_count: *mut usize) -> EhfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out(out_count, "out_count")? = h.inner.merges.len();
        Ok(())
    })
}

/// Merge `i`: the two joined node ids (leaves are `0..n`, merge `j` creates
/// node `n + j`) and the linkage height.
///
/// # Safety
/// `handle` must come from `ehf_dendrogram_new`; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ehf_dendrogram_merge(
    handle: *const EhfDendrogram,
    i: usize,
    left: *mut usize,
    right: *mut usize,
    height: *mut f64,
) -> EhfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let m = h
            .inner
            .merges
            .get(i)
            .ok_or_else(|| invalid(format!("merge {i} out of range ({} merges)", h.inner.merges.len())))?;
        *out(left, "left")? = m.left;
        *out(right, "right")? = m.right;
        *out(height, "height")? = m.height;
        Ok(())
    })
}

/// Cut into exactly `k` clusters; writes one label in `0..k` per leaf.
///
/// # Safety
/// `labels` must have room for `n` entries, where `n` is the leaf count.
#[no_mangle]
pub unsafe extern "C" fn ehf_dendrogram_cut(
    handle: *const EhfDendrogram,
    k: usize,
    labels: *mut usize,
    n: usize,
) -> EhfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if n != h.inner.n() {
            return Err(invalid(format!("labels buffer holds {n}, dendrogram has {} leaves", h.inner.n())));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let l = cut_labels(&h.inner, k)?;
        std::slice::from_raw_parts_mut(labels, n).copy_from_slice(&l);
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `ehf_dendrogram_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ehf_dendrogram_free(handle: *mut EhfDendrogram) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// A trained tracer together with the exercise features it reads.
pub struct EhfTracer {
    params: TracerParams,
    table: FeatureTable,
}

/// Load a tracer checkpoint. `exercises` and `embeddings` name the corpus;
/// `knowledge`, `clusters` and `difficulty` are the feature files the
/// variant needs and may be NULL when it does not.
///
/// # Safety
/// Strings must be NUL-terminated or NULL where allowed; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ehf_tracer_load(
    checkpoint: *const c_char,
    exercises: *const c_char,
    embeddings: *const c_char,
    knowledge: *const c_char,
    clusters: *const c_char,
    difficulty: *const c_char,
    out_handle: *mut *mut EhfTracer,
) -> EhfStatus {
    guard(|| {
        let o = out(out_handle, "out_handle")?;
        *o = ptr::null_mut();
        let ck = load_checkpoint(&PathBuf::from(string(checkpoint, "checkpoint")?))?;
        let corpus = load_corpus(
            &PathBuf::from(string(exercises, "exercises")?),
            &PathBuf::from(string(embeddings, "embeddings")?),
        )?;
        let mut table = FeatureTable::from_corpus(&corpus)?;
        if let Some(p) = opt_path(knowledge, "knowledge")? {
            table = table.with_knowledge(&ehfkt::kdes::load_knowledge(&p)?)?;
        }
        if let Some(p) = opt_path(clusters, "clusters")? {
            table = table.with_clusters(&ehfkt::sfes::load_assignment(&p)?)?;
        }
        if let Some(p) = opt_path(difficulty, "difficulty")? {
            table = table.with_difficulty(&ehfkt::dfes::load_difficulty(&p)?)?;
        }
        let params = TracerParams::from_checkpoint(&ck, &table)?;
        *o = Box::into_raw(Box::new(EhfTracer { params, table }));
        Ok(())
    })
}

/// Probability that `next` is answered correctly after the `n` past
/// attempts `(history_ids[i], history_correct[i])`, `n >= 1`.
///
/// # Safety
/// `history_ids` must hold `n` NUL-terminated strings and `history_correct`
/// `n` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ehf_tracer_predict_next(
    handle: *const EhfTracer,
    history_ids: *const *const c_char,
    history_correct: *const u8,
    n: usize,
    next: *const c_char,
    out_p: *mut f64,
) -> EhfStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let ids = slice(history_ids, n, "history_ids")?;
        let rs = slice(history_correct, n, "history_correct")?;
        let owned: Vec<String> = ids
            .iter()
            .map(|&p| string(p, "history id"))
            .collect::<Result<_, _>>()?;
        if let Some(bad) = rs.iter().find(|&&r| r > 1) {
            return Err(invalid(format!("correctness must be 0 or 1, got {bad}")));
        }
        let hist: Vec<(&str, u8)> = owned.iter().map(String::as_str).zip(rs.iter().copied()).collect();
        *out(out_p, "out_p")? = predict_next(&h.params, &h.table, &hist, &string(next, "next")?)?;
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `ehf_tracer_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ehf_tracer_free(handle: *mut EhfTracer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
