//! C interface: opaque matrix and report handles, integer status codes, and
//! a thread-local last-error message. The generated header lives in
//! `include/countsplit.h`.
//!
//! Conventions: out parameters are written only when the call returns
//! `CS_OK`; every handle has exactly one matching `_free`; strings returned
//! through `char**` must be released with `cs_string_free`. All entry points
//! catch panics and report them as `CS_ERR_NUMERIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use countsplit::{
    load_matrix, run_de, save_matrix, CountMatrix, Error, GammaPolicy, MatrixFormat,
    MethodConfig,
};

/// Status codes; nonzero values match the CLI exit-code convention, with
/// two extra codes for argument problems that can only arise through C.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[allow(non_camel_case_types)]
pub enum cs_status {
    CS_OK = 0,
    CS_ERR_CONFIG = 2,
    CS_ERR_IO = 3,
    CS_ERR_NUMERIC = 4,
    CS_ERR_NULL_ARG = 5,
    CS_ERR_UTF8 = 6,
}

/// Opaque count matrix handle.
#[allow(non_camel_case_types)]
pub struct cs_matrix(CountMatrix);

/// Opaque differential-expression report handle.
#[allow(non_camel_case_types)]
pub struct cs_report(countsplit::DeReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> cs_status {
    match err.exit_code() {
        3 => cs_status::CS_ERR_IO,
        4 => cs_status::CS_ERR_NUMERIC,
        _ => cs_status::CS_ERR_CONFIG,
    }
}

fn fail(err: Error) -> cs_status {
    set_error(&err.to_string());
    status_of(&err)
}

fn guarded(f: impl FnOnce() -> cs_status) -> cs_status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            cs_status::CS_ERR_NUMERIC
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, cs_status> {
    if ptr.is_null() {
        set_error("path is null");
        return Err(cs_status::CS_ERR_NULL_ARG);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(cs_status::CS_ERR_UTF8)
        }
    }
}

/// Message for the most recent failure on this thread; empty string if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Load a matrix from `path` (.mtx/.mm MatrixMarket, anything else dense
/// CSV).
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_load(
    path: *const c_char,
    out: *mut *mut cs_matrix,
) -> cs_status {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_matrix(path, MatrixFormat::from_path(path)) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(cs_matrix(m)));
                cs_status::CS_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Build a matrix from a row-major buffer of `n_cells * n_genes` counts.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_from_counts(
    n_cells: usize,
    n_genes: usize,
    counts: *const u64,
    out: *mut *mut cs_matrix,
) -> cs_status {
    guarded(|| {
        if counts.is_null() || out.is_null() {
            set_error("counts or out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        let len = match n_cells.checked_mul(n_genes) {
            Some(len) => len,
            None => {
                set_error("matrix dimensions overflow");
                return cs_status::CS_ERR_CONFIG;
            }
        };
        let values = std::slice::from_raw_parts(counts, len).to_vec();
        match CountMatrix::from_counts(n_cells, n_genes, values) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(cs_matrix(m)));
                cs_status::CS_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Write a matrix in the format implied by the path's extension.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_save(
    matrix: *const cs_matrix,
    path: *const c_char,
) -> cs_status {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("matrix is null");
            return cs_status::CS_ERR_NULL_ARG;
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match save_matrix(&matrix.0, path, MatrixFormat::from_path(path)) {
            Ok(()) => cs_status::CS_OK,
            Err(e) => fail(e),
        }
    })
}

/// Number of rows (cells); 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_n_cells(matrix: *const cs_matrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.n_cells())
}

/// Number of columns (genes); 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cs_matrix_n_genes(matrix: *const cs_matrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.0.n_genes())
}

#[no_mangle]
pub unsafe extern "C" fn cs_matrix_free(matrix: *mut cs_matrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Thin `matrix` into independent train and test matrices; each entry of
/// train is Binomial(count, epsilon) and test is the remainder.
#[no_mangle]
pub unsafe extern "C" fn cs_count_split(
    matrix: *const cs_matrix,
    epsilon: f64,
    seed: u64,
    train_out: *mut *mut cs_matrix,
    test_out: *mut *mut cs_matrix,
) -> cs_status {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("matrix is null");
            return cs_status::CS_ERR_NULL_ARG;
        };
        if train_out.is_null() || test_out.is_null() {
            set_error("out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        match countsplit::count_split(&matrix.0, epsilon, seed) {
            Ok(pair) => {
                *train_out = Box::into_raw(Box::new(cs_matrix(pair.train)));
                *test_out = Box::into_raw(Box::new(cs_matrix(pair.test)));
                cs_status::CS_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Run one per-gene differential-expression procedure. `config_json` is a
/// method config object, e.g. `{"method": "count_split", "epsilon": 0.5,
/// "seed": 1}`; an optional extra `"gamma": "unit"` field switches size
/// factors from per-cell estimates to all ones.
#[no_mangle]
pub unsafe extern "C" fn cs_de_run(
    matrix: *const cs_matrix,
    config_json: *const c_char,
    out: *mut *mut cs_report,
) -> cs_status {
    guarded(|| {
        let Some(matrix) = matrix.as_ref() else {
            set_error("matrix is null");
            return cs_status::CS_ERR_NULL_ARG;
        };
        if config_json.is_null() || out.is_null() {
            set_error("config or out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        let config = match CStr::from_ptr(config_json).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("config is not valid UTF-8");
                return cs_status::CS_ERR_UTF8;
            }
        };
        let value: serde_json::Value = match serde_json::from_str(config) {
            Ok(v) => v,
            Err(e) => return fail(Error::InvalidConfig(format!("config JSON: {e}"))),
        };
        let policy = match value.get("gamma").and_then(|g| g.as_str()) {
            None | Some("estimate") => GammaPolicy::Estimate,
            Some("unit") => GammaPolicy::Unit,
            Some(other) => {
                return fail(Error::InvalidConfig(format!(
                    "unknown gamma policy '{other}' (expected estimate or unit)"
                )))
            }
        };
        let cfg: MethodConfig = match serde_json::from_value(value) {
            Ok(c) => c,
            Err(e) => return fail(Error::InvalidConfig(format!("config JSON: {e}"))),
        };
        match run_de(&matrix.0, &policy, &cfg) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(cs_report(report)));
                cs_status::CS_OK
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of per-gene rows in the report; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn cs_report_n_genes(report: *const cs_report) -> usize {
    report.as_ref().map_or(0, |r| r.0.results.len())
}

/// Copy the per-gene p-values into `out`, which must hold exactly
/// `cs_report_n_genes` values. Genes without a p-value (failed fits) are
/// written as NaN.
#[no_mangle]
pub unsafe extern "C" fn cs_report_pvalues(
    report: *const cs_report,
    out: *mut f64,
    len: usize,
) -> cs_status {
    guarded(|| {
        let Some(report) = report.as_ref() else {
            set_error("report is null");
            return cs_status::CS_ERR_NULL_ARG;
        };
        if out.is_null() {
            set_error("out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        if len != report.0.results.len() {
            set_error(&format!(
                "buffer holds {len} values but the report has {}",
                report.0.results.len()
            ));
            return cs_status::CS_ERR_CONFIG;
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (slot, r) in dst.iter_mut().zip(&report.0.results) {
            *slot = r.p_value.unwrap_or(f64::NAN);
        }
        cs_status::CS_OK
    })
}

/// Serialize the full report to a JSON string owned by the caller; release
/// it with `cs_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cs_report_to_json(
    report: *const cs_report,
    out: *mut *mut c_char,
) -> cs_status {
    guarded(|| {
        let Some(report) = report.as_ref() else {
            set_error("report is null");
            return cs_status::CS_ERR_NULL_ARG;
        };
        if out.is_null() {
            set_error("out pointer is null");
            return cs_status::CS_ERR_NULL_ARG;
        }
        let json = match report.0.to_json() {
            Ok(j) => j,
            Err(e) => return fail(e),
        };
        match CString::new(json) {
            Ok(c) => {
                *out = c.into_raw();
                cs_status::CS_OK
            }
            Err(_) => {
                set_error("report JSON contains a NUL byte");
                cs_status::CS_ERR_NUMERIC
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn cs_report_free(report: *mut cs_report) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Release a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
