//! C ABI over the xp-core serving engine and scoring helpers.
//!
//! Every function returns an [`XpStatus`]. On failure a message is kept in a
//! thread-local slot readable with [`xp_last_error`]. Strings handed out by
//! the library must be released with [`xp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use xp_core::catalog::load_catalog;
use xp_core::ranker::{listwise_softmax_loss, ndcg_at_k, pairwise_hinge_loss, RankerModel};
use xp_core::retrieval::{band, combined_score, read_candidates_jsonl, QualityBand};
use xp_core::serving::{CartEvent, Engine, EngineOptions, ModelTag, RankerBundle, XpIndex};
use xp_core::XpError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    UnknownItem = 4,
    UnknownCart = 5,
    ModelUnavailable = 6,
    Io = 7,
    BadInput = 8,
    Internal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XpBand {
    Poor = 0,
    Fair = 1,
    Good = 2,
    VeryGood = 3,
    Excellent = 4,
}

impl From<QualityBand> for XpBand {
    fn from(b: QualityBand) -> Self {
        match b {
            QualityBand::Poor => XpBand::Poor,
            QualityBand::Fair => XpBand::Fair,
            QualityBand::Good => XpBand::Good,
            QualityBand::VeryGood => XpBand::VeryGood,
            QualityBand::Excellent => XpBand::Excellent,
        }
    }
}

/// Opaque engine handle.
pub struct XpEngine {
    inner: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &XpError) -> XpStatus {
    match e {
        XpError::UnknownItem(_) => XpStatus::UnknownItem,
        XpError::UnknownCart(_) => XpStatus::UnknownCart,
        XpError::ModelUnavailable => XpStatus::ModelUnavailable,
        XpError::Io(_) => XpStatus::Io,
        XpError::OutOfRange(_)
        | XpError::ConfigInvalid(_)
        | XpError::EmptyPositives
        | XpError::DimensionMismatch { .. } => XpStatus::InvalidArgument,
        XpError::MalformedRecord { .. }
        | XpError::Json(_)
        | XpError::BadCheckpoint(_)
        | XpError::DuplicateItemId(_)
        | XpError::UnknownSegment(_) => XpStatus::BadInput,
        _ => XpStatus::Internal,
    }
}

struct Fail(XpStatus, String);

impl From<XpError> for Fail {
    fn from(e: XpError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> XpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside xp_ffi".into());
            XpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(XpStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(XpStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(XpStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(XpStatus::NullArgument, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn engine_arg<'a>(p: *const XpEngine) -> Result<&'a Engine, Fail> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Fail(XpStatus::NullArgument, "`engine` is null".into()))
}

/// Last error message on this thread, or null. Valid until the next call
/// into the library on the same thread.
#[no_mangle]
pub extern "C" fn xp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Opens an engine over a catalog and an Item XP candidate file.
/// `checkpoint` may be null, in which case only the heuristic model is
/// available. `max_per_pt` of 0 selects the default.
///
/// # Safety
/// String arguments must be null or valid NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn xp_engine_open(
    catalog: *const c_char,
    candidates: *const c_char,
    checkpoint: *const c_char,
    max_per_pt: u32,
    out: *mut *mut XpEngine,
) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let catalog = Arc::new(load_catalog(Path::new(str_arg(catalog, "catalog")?))?);
        let index = XpIndex::new(read_candidates_jsonl(Path::new(str_arg(candidates, "candidates")?))?);
        let mut options = EngineOptions::default();
        if max_per_pt > 0 {
            options.max_per_pt = max_per_pt as usize;
        }
        let mut engine = Engine::new(Arc::clone(&catalog), index, options);
        if !checkpoint.is_null() {
            let model = RankerModel::load(Path::new(str_arg(checkpoint, "checkpoint")?))?;
            engine = engine.with_ranker(RankerBundle::new(model, &catalog)?);
        }
        *out = Box::into_raw(Box::new(XpEngine { inner: engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`xp_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xp_engine_free(engine: *mut XpEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Applies an add (`is_add` true) or remove event to a cart.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xp_cart_event(
    engine: *const XpEngine,
    cart_id: *const c_char,
    item_id: *const c_char,
    is_add: bool,
    ts: u64,
) -> XpStatus {
    guard(|| {
        let e = engine_arg(engine)?;
        let cart = str_arg(cart_id, "cart_id")?;
        let item = str_arg(item_id, "item_id")?;
        let ev = if is_add { CartEvent::add(item, ts) } else { CartEvent::remove(item, ts) };
        e.on_cart_event(cart, &ev)?;
        Ok(())
    })
}

/// Pool size of a cart.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xp_pool_size(engine: *const XpEngine, cart_id: *const c_char, out: *mut usize) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        let e = engine_arg(engine)?;
        *out = e.cart(str_arg(cart_id, "cart_id")?)?.pool.len();
        Ok(())
    })
}

/// Carousel for a cart as a JSON string. `model` is "ranker" or
/// "heuristic". Free the result with [`xp_string_free`].
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn xp_recommend_json(
    engine: *const XpEngine,
    cart_id: *const c_char,
    k: u32,
    model: *const c_char,
    explain: bool,
    out_json: *mut *mut c_char,
) -> XpStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let e = engine_arg(engine)?;
        let tag: ModelTag = str_arg(model, "model")?.parse()?;
        let car = e.recommend(str_arg(cart_id, "cart_id")?, k as usize, tag, explain, None)?;
        let text = serde_json::to_string(&car).map_err(XpError::from)?;
        *out_json = CString::new(text)
            .map_err(|_| Fail(XpStatus::Internal, "interior NUL in JSON".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn xp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// CE score times LLM score; both must lie in [0, 1].
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xp_combined_score(ce: f64, llm: f64, out: *mut f64) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = combined_score(ce, llm)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xp_quality_band(score: f64, out: *mut XpBand) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = band(score)?.into();
        Ok(())
    })
}

/// NDCG@k of a ranking given as relevance flags in rank order (nonzero =
/// relevant).
///
/// # Safety
/// `relevance` must point to `n` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xp_ndcg_at_k(relevance: *const u8, n: usize, k: usize, out: *mut f64) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        let flags = slice_arg(relevance, n, "relevance")?;
        let ranked: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let relevant = (0..n).filter(|&i| flags[i] != 0).map(|i| i.to_string()).collect();
        *out = ndcg_at_k(&ranked, &relevant, k);
        Ok(())
    })
}

/// Listwise softmax loss over positive and negative scores.
///
/// # Safety
/// Arrays must hold the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xp_listwise_loss(
    pos: *const f64,
    n_pos: usize,
    neg: *const f64,
    n_neg: usize,
    tau: f64,
    out: *mut f64,
) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        if !(tau > 0.0) {
            return Err(Fail(XpStatus::InvalidArgument, "tau must be positive".into()));
        }
        *out = listwise_softmax_loss(slice_arg(pos, n_pos, "pos")?, slice_arg(neg, n_neg, "neg")?, tau)?;
        Ok(())
    })
}

/// max(0, delta - (s_pos - s_neg)).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn xp_pairwise_hinge(s_pos: f64, s_neg: f64, delta: f64, out: *mut f64) -> XpStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = pairwise_hinge_loss(s_pos, s_neg, delta);
        Ok(())
    })
}
