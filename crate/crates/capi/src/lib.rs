//! C ABI over the interference-matrix analytics kernel: load a loss matrix
//! from CSV, derive the interference matrix, and query robustness,
//! friendliness, and IQR outlier bounds from any language with a C FFI.
//!
//! Conventions: every fallible call returns an [`IfxStatus`]; out-parameters
//! are written only on `IFX_STATUS_OK`; handles are opaque and must be
//! released with the matching `*_free` function; `ifx_last_error` returns a
//! thread-local, NUL-terminated description of the most recent failure.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use ifx::analytics::{friendliness, interference, iqr_outliers, robustness};
use ifx::matrix::LabeledMatrix;

/// Result discipline for every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum IfxStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Domain = 5,
    BufferTooSmall = 6,
}

/// Opaque handle: an N x N held-out loss matrix with masked-cell support.
pub struct IfxLossMatrix(ifx::analytics::LossMatrix);

/// Opaque handle: the derived interference matrix.
pub struct IfxInterference(ifx::analytics::InterferenceMatrix);

/// Quartile statistics of one sample, IQR outlier rule bounds included.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct IfxIqrBounds {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_outliers: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: IfxStatus, message: &str) -> IfxStatus {
    set_error(message);
    status
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ifx_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Thread-local message describing the most recent failure in this thread.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ifx_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn path_from(ptr: *const c_char) -> Result<std::path::PathBuf, IfxStatus> {
    if ptr.is_null() {
        set_error("null path");
        return Err(IfxStatus::NullArgument);
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| {
            set_error("path is not valid UTF-8");
            IfxStatus::InvalidUtf8
        })?;
    Ok(Path::new(s).to_path_buf())
}

/// Read a loss matrix from its CSV form (labels in the first row/column,
/// empty cells masked). On success writes a handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifx_loss_matrix_read_csv(
    path: *const c_char,
    out: *mut *mut IfxLossMatrix,
) -> IfxStatus {
    if out.is_null() {
        return fail(IfxStatus::NullArgument, "null out pointer");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match LabeledMatrix::load_csv(&path) {
        Ok(matrix) => {
            let handle = Box::new(IfxLossMatrix(ifx::analytics::LossMatrix(matrix)));
            *out = Box::into_raw(handle);
            IfxStatus::Ok
        }
        Err(e @ ifx::matrix::MatrixError::Io { .. }) => fail(IfxStatus::Io, &e.to_string()),
        Err(e) => fail(IfxStatus::Parse, &e.to_string()),
    }
}

/// Release a loss matrix handle. Passing NULL is a no-op.
///
/// # Safety
/// `matrix` must be a pointer from `ifx_loss_matrix_read_csv`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifx_loss_matrix_free(matrix: *mut IfxLossMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Number of languages (matrix side length).
///
/// # Safety
/// `matrix` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifx_loss_matrix_len(matrix: *const IfxLossMatrix) -> usize {
    if matrix.is_null() {
        return 0;
    }
    (*matrix).0.matrix().n()
}

/// Derive the interference matrix `I(A,B) = (L(A,A) - L(A,B)) / L(A,A)` from
/// a loss matrix. Fails with `DOMAIN` if a diagonal entry is missing or zero.
///
/// # Safety
/// `loss` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_compute(
    loss: *const IfxLossMatrix,
    out: *mut *mut IfxInterference,
) -> IfxStatus {
    if loss.is_null() || out.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    match interference(&(*loss).0) {
        Ok(matrix) => {
            *out = Box::into_raw(Box::new(IfxInterference(matrix)));
            IfxStatus::Ok
        }
        Err(e) => fail(IfxStatus::Domain, &e.to_string()),
    }
}

/// Release an interference matrix handle. Passing NULL is a no-op.
///
/// # Safety
/// `matrix` must be a pointer from `ifx_interference_compute`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_free(matrix: *mut IfxInterference) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Number of languages (matrix side length).
///
/// # Safety
/// `matrix` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_len(matrix: *const IfxInterference) -> usize {
    if matrix.is_null() {
        return 0;
    }
    (*matrix).0.matrix().n()
}

/// Fetch one interference cell. Masked or out-of-range cells return `DOMAIN`
/// and leave `out_value` untouched.
///
/// # Safety
/// `matrix` must be a live handle and `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_get(
    matrix: *const IfxInterference,
    row: usize,
    col: usize,
    out_value: *mut f64,
) -> IfxStatus {
    if matrix.is_null() || out_value.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    let m = (*matrix).0.matrix();
    if row >= m.n() || col >= m.n() {
        return fail(IfxStatus::Domain, "row/col out of range");
    }
    match m.get(row, col) {
        Some(v) => {
            *out_value = v;
            IfxStatus::Ok
        }
        None => fail(IfxStatus::Domain, "cell is masked"),
    }
}

/// Copy the language code at `index` into `buf` as a NUL-terminated string.
///
/// # Safety
/// `buf` must point to at least `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_label(
    matrix: *const IfxInterference,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> IfxStatus {
    if matrix.is_null() || buf.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    let m = (*matrix).0.matrix();
    if index >= m.n() {
        return fail(IfxStatus::Domain, "index out of range");
    }
    let label = m.labels()[index].as_bytes();
    if buf_len < label.len() + 1 {
        return fail(
            IfxStatus::BufferTooSmall,
            &format!("need {} bytes", label.len() + 1),
        );
    }
    std::ptr::copy_nonoverlapping(label.as_ptr(), buf as *mut u8, label.len());
    *buf.add(label.len()) = 0;
    IfxStatus::Ok
}

unsafe fn vector_into(
    values: Result<Vec<(String, f64)>, ifx::analytics::AnalyticsError>,
    out_buf: *mut f64,
    buf_len: usize,
) -> IfxStatus {
    match values {
        Ok(v) => {
            if buf_len < v.len() {
                return fail(IfxStatus::BufferTooSmall, &format!("need {} slots", v.len()));
            }
            for (i, (_, value)) in v.iter().enumerate() {
                *out_buf.add(i) = *value;
            }
            IfxStatus::Ok
        }
        Err(e) => fail(IfxStatus::Domain, &e.to_string()),
    }
}

/// Row averages of present off-diagonal entries, in label order. `buf_len`
/// must be at least the matrix side length.
///
/// # Safety
/// `out_buf` must point to at least `buf_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_robustness(
    matrix: *const IfxInterference,
    out_buf: *mut f64,
    buf_len: usize,
) -> IfxStatus {
    if matrix.is_null() || out_buf.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    vector_into(robustness(&(*matrix).0), out_buf, buf_len)
}

/// Column averages of present off-diagonal entries, in label order.
///
/// # Safety
/// `out_buf` must point to at least `buf_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_friendliness(
    matrix: *const IfxInterference,
    out_buf: *mut f64,
    buf_len: usize,
) -> IfxStatus {
    if matrix.is_null() || out_buf.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    vector_into(friendliness(&(*matrix).0), out_buf, buf_len)
}

/// Write the interference matrix in the pipeline's CSV form.
///
/// # Safety
/// `matrix` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ifx_interference_write_csv(
    matrix: *const IfxInterference,
    path: *const c_char,
) -> IfxStatus {
    if matrix.is_null() {
        return fail(IfxStatus::NullArgument, "null matrix");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match (*matrix).0.matrix().save_csv(&path) {
        Ok(()) => IfxStatus::Ok,
        Err(e) => fail(IfxStatus::Io, &e.to_string()),
    }
}

/// Type-7 quartiles and the 1.5 IQR outlier bounds of `values[0..n]`.
/// Requires n >= 4 finite values.
///
/// # Safety
/// `values` must point to `n` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ifx_iqr_bounds(
    values: *const f64,
    n: usize,
    out: *mut IfxIqrBounds,
) -> IfxStatus {
    if values.is_null() || out.is_null() {
        return fail(IfxStatus::NullArgument, "null argument");
    }
    let slice = std::slice::from_raw_parts(values, n);
    if slice.iter().any(|v| !v.is_finite()) {
        return fail(IfxStatus::Domain, "values must be finite");
    }
    let labeled: Vec<(String, f64)> = slice
        .iter()
        .enumerate()
        .map(|(i, &v)| (i.to_string(), v))
        .collect();
    match iqr_outliers("values", &labeled) {
        Ok(report) => {
            *out = IfxIqrBounds {
                q1: report.q1,
                q3: report.q3,
                iqr: report.iqr,
                lower: report.lower,
                upper: report.upper,
                n_outliers: report.outliers.len(),
            };
            IfxStatus::Ok
        }
        Err(e) => fail(IfxStatus::Domain, &e.to_string()),
    }
}
