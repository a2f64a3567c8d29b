//! C ABI over the `vista` library.
//!
//! Every fallible function returns a [`VistaStatus`]; on failure a message
//! is kept per thread and can be fetched with
//! [`vista_last_error_message`]. Objects cross the boundary as opaque
//! handles that the caller releases with the matching `_free` function.
//! Outputs are written only on success, except the sizes reported along
//! with `BufferTooSmall`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vista::cli::{sample_heatmap, EXIT_BUDGET, EXIT_CHECK, EXIT_DIVERGENCE, EXIT_MISMATCH, EXIT_OVERSIZE, EXIT_PARSE};
use vista::infotheory::{info_curve, lambda_from_rho, rho_vista, DiscreteSequenceModel};
use vista::losses::{self, mean_weight, TextRepr, WeightScheme};
use vista::model::{checkpoint, ModelConfig, ModelParams};
use vista::training::TaskParams;
use vista::Error;

/// Status codes; the non-zero values shared with the command-line tool
/// keep its meaning.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VistaStatus {
    Ok = 0,
    CheckFailed = 1,
    Parse = 2,
    Divergence = 3,
    Budget = 4,
    Mismatch = 5,
    Oversize = 6,
    /// Null pointer, bad enum value or an argument outside its domain.
    InvalidArgument = 7,
    /// Output buffer too small; the required length was still reported.
    BufferTooSmall = 8,
    /// A quantity is undefined for these inputs.
    Undefined = 9,
    /// Internal panic caught at the boundary.
    Internal = 10,
}

/// Position weighting selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VistaScheme {
    Normalized = 0,
    Linear = 1,
    /// Uses the accompanying constant.
    Uniform = 2,
}

/// Opaque discrete caption model.
pub struct VistaDiscreteModel {
    inner: DiscreteSequenceModel,
}

/// Opaque trained model loaded from a checkpoint.
pub struct VistaModel {
    config: ModelConfig,
    params: ModelParams,
}

/// Extents of a loaded model.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VistaModelDims {
    pub vocab_size: u32,
    pub d_model: u32,
    pub n_layers: u32,
    pub n_heads: u32,
    pub n_image_tokens: u32,
    pub max_text_len: u32,
    pub d_image_feat: u32,
    pub seed: u64,
    pub num_params: u64,
}

/// One row of an information curve; undefined cells hold NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VistaInfoRow {
    pub t: u32,
    pub h_prefix: f64,
    pub h_step: f64,
    pub i_vis: f64,
    pub i_cond: f64,
    pub i_total: f64,
    pub ratio: f64,
    pub rho: f64,
    pub bound: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> VistaStatus {
    let code = vista::cli::exit_code(err);
    match err {
        Error::Undefined(_) => VistaStatus::Undefined,
        Error::Contract(_) | Error::Parameter(_) | Error::Index(_) | Error::Dimension(_) => {
            VistaStatus::InvalidArgument
        }
        _ => match code {
            c if c == EXIT_CHECK => VistaStatus::CheckFailed,
            c if c == EXIT_DIVERGENCE => VistaStatus::Divergence,
            c if c == EXIT_BUDGET => VistaStatus::Budget,
            c if c == EXIT_MISMATCH => VistaStatus::Mismatch,
            c if c == EXIT_OVERSIZE => VistaStatus::Oversize,
            c if c == EXIT_PARSE => VistaStatus::Parse,
            _ => VistaStatus::Internal,
        },
    }
}

struct Fail(VistaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(VistaStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VistaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VistaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VistaStatus::Internal
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid("null output pointer"))
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid("null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("string is not UTF-8"))
}

fn scheme(kind: i32, c: f64) -> Result<WeightScheme, Fail> {
    let s = match kind {
        k if k == VistaScheme::Normalized as i32 => WeightScheme::Normalized,
        k if k == VistaScheme::Linear as i32 => WeightScheme::Linear,
        k if k == VistaScheme::Uniform as i32 => WeightScheme::Uniform(c),
        other => return Err(Fail(VistaStatus::InvalidArgument, format!("unknown scheme {other}"))),
    };
    s.validate()?;
    Ok(s)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vista_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// without the terminator, 0 when there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn vista_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Weight `f(t)` of position `t` (1-based) among `m` supervised tokens.
/// `kind` is a `VistaScheme` value; `c` is used by the uniform scheme.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_weight(t: usize, m: usize, kind: i32, c: f64, out: *mut f64) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        let s = scheme(kind, c)?;
        *out = losses::vista_weight(t, m, s)?;
        Ok(())
    })
}

/// Mean of `f(1..=m)`, summed exactly.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_mean_weight(m: usize, kind: i32, c: f64, out: *mut f64) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        if m == 0 {
            return Err(invalid("m must be at least 1"));
        }
        let s = scheme(kind, c)?;
        *out = mean_weight(m, s)?;
        Ok(())
    })
}

/// Visual share after boosting the visual term by `1 + lambda`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_rho(i_vis: f64, i_cond: f64, lambda: f64, out: *mut f64) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = rho_vista(i_vis, i_cond, lambda)?;
        Ok(())
    })
}

/// Boost that brings the visual share to `rho`. `boost_needed` is set to
/// 1 when the result is positive, else 0.
///
/// # Safety
/// `lambda` and `boost_needed` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn vista_lambda_from_rho(
    rho: f64,
    i_vis: f64,
    i_cond: f64,
    lambda: *mut f64,
    boost_needed: *mut i32,
) -> VistaStatus {
    guard(|| {
        let lambda = out_ref(lambda)?;
        let boost = out_ref(boost_needed)?;
        let sol = lambda_from_rho(rho, i_vis, i_cond)?;
        *lambda = sol.lambda;
        *boost = i32::from(sol.boost_needed);
        Ok(())
    })
}

/// Builtin discrete model: `iid-uniform`, `strong-memory` or `copy-channel`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_discrete_builtin(
    name: *const c_char,
    horizon: usize,
    out: *mut *mut VistaDiscreteModel,
) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        let inner = DiscreteSequenceModel::builtin(c_str(name)?, horizon)?;
        *out = Box::into_raw(Box::new(VistaDiscreteModel { inner }));
        Ok(())
    })
}

/// Discrete model from its TOML description.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_discrete_from_toml(
    text: *const c_char,
    out: *mut *mut VistaDiscreteModel,
) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        let inner = DiscreteSequenceModel::from_toml(c_str(text)?)?;
        *out = Box::into_raw(Box::new(VistaDiscreteModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn vista_discrete_free(model: *mut VistaDiscreteModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Exact information curve for `t = 1..=horizon` with `λ_t = t/horizon`.
/// Writes up to `cap` rows and the row count to `len`; returns
/// `BufferTooSmall` (with `len` set) when `cap < horizon`.
///
/// # Safety
/// `model` must be a live handle, `rows` valid for `cap` elements (or null
/// when `cap == 0`), `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_info_curve(
    model: *const VistaDiscreteModel,
    horizon: usize,
    epsilon: f64,
    rows: *mut VistaInfoRow,
    cap: usize,
    len: *mut usize,
) -> VistaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| invalid("null model"))?;
        let len = out_ref(len)?;
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        *len = horizon;
        if cap < horizon {
            return Err(Fail(VistaStatus::BufferTooSmall, format!("need {horizon} rows, got {cap}")));
        }
        if rows.is_null() {
            return Err(invalid("null row buffer"));
        }
        let curve = info_curve(&model.inner, horizon, epsilon, |t| t as f64 / horizon as f64)?;
        let out = std::slice::from_raw_parts_mut(rows, horizon);
        for (dst, p) in out.iter_mut().zip(&curve.points) {
            *dst = VistaInfoRow {
                t: p.t as u32,
                h_prefix: p.h_prefix,
                h_step: p.h_step,
                i_vis: p.i_vis,
                i_cond: p.i_cond,
                i_total: p.i_total,
                ratio: if p.ratio_undefined { f64::NAN } else { p.ratio },
                rho: p.rho.unwrap_or(f64::NAN),
                bound: p.bound.unwrap_or(f64::NAN),
            };
        }
        Ok(())
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_model_load(path: *const c_char, out: *mut *mut VistaModel) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        let (config, params) = checkpoint::load(c_str(path)?)?;
        *out = Box::into_raw(Box::new(VistaModel { config, params }));
        Ok(())
    })
}

/// Parses checkpoint bytes held in memory.
///
/// # Safety
/// `bytes` must be valid for `len` bytes and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_model_from_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut VistaModel,
) -> VistaStatus {
    guard(|| {
        let out = out_ref(out)?;
        if bytes.is_null() {
            return Err(invalid("null buffer"));
        }
        let (config, params) = checkpoint::from_bytes(std::slice::from_raw_parts(bytes, len))?;
        *out = Box::into_raw(Box::new(VistaModel { config, params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn vista_model_free(model: *mut VistaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vista_model_dims(model: *const VistaModel, out: *mut VistaModelDims) -> VistaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("null model"))?;
        let out = out_ref(out)?;
        let c = &m.config;
        *out = VistaModelDims {
            vocab_size: c.vocab_size as u32,
            d_model: c.d_model as u32,
            n_layers: c.n_layers as u32,
            n_heads: c.n_heads as u32,
            n_image_tokens: c.n_image_tokens as u32,
            max_text_len: c.max_text_len as u32,
            d_image_feat: c.d_image_feat as u32,
            seed: c.seed,
            num_params: m.params.num_params() as u64,
        };
        Ok(())
    })
}

/// Text-by-image cosine similarities (row-major, `max_text_len` rows by
/// `n_image_tokens` columns) for one example of the default task with seed
/// `task_seed`, matching the command-line `heatmap`. Returns
/// `BufferTooSmall` with `rows`/`cols` set when `cap` is short.
///
/// # Safety
/// `model` must be a live handle, `values` valid for `cap` elements (or
/// null when `cap == 0`), `rows` and `cols` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn vista_model_heatmap(
    model: *const VistaModel,
    task_seed: u64,
    values: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> VistaStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("null model"))?;
        let rows = out_ref(rows)?;
        let cols = out_ref(cols)?;
        let (r, c) = (m.config.max_text_len, m.config.n_image_tokens);
        *rows = r;
        *cols = c;
        if cap < r * c {
            return Err(Fail(VistaStatus::BufferTooSmall, format!("need {} values, got {cap}", r * c)));
        }
        if values.is_null() {
            return Err(invalid("null value buffer"));
        }
        let task = TaskParams::for_model(&m.config, task_seed);
        let (map, _) = sample_heatmap(&m.config, &m.params, task, TextRepr::Embedding)?;
        std::slice::from_raw_parts_mut(values, map.values.len()).copy_from_slice(&map.values);
        Ok(())
    })
}
