//! C interface to qgemv.
//!
//! Objects are opaque heap handles created by `qg_*_new` style functions and
//! released with the matching `qg_*_free`. Every fallible call returns a
//! [`QgStatus`]; on failure [`qg_last_error_message`] describes the error
//! on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qgemv::kernels::ThinMatrix;
use qgemv::parallel::{Executor, NumaPolicy, PlacedMatrix};
use qgemv::qmat;
use qgemv::quant::QuantMatrixQ4;
use qgemv::toymodel::{LayerShapes, ToyDecoder};
use qgemv::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Format = 5,
    Io = 6,
    State = 7,
    Panic = 8,
}

/// Placement policies, passed as `uint32_t` to [`qg_executor_new`].
#[repr(u32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QgPolicy {
    BalancingOn = 0,
    AllOff = 1,
    CoreBinding = 2,
    MemoryInterleave = 3,
}

/// A Q4 weight matrix.
pub struct QgMatrix {
    inner: PlacedMatrix,
}

/// A worker pool bound to one placement policy.
pub struct QgExecutor {
    inner: Executor,
}

/// A synthetic decoder with its KV cache.
pub struct QgDecoder {
    inner: ToyDecoder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg).unwrap_or_else(|e| {
        let end = e.nul_position();
        CString::new(&e.into_vec()[..end]).expect("prefix has no NUL")
    });
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> QgStatus {
    match e {
        Error::NonFinite => QgStatus::NonFinite,
        Error::Shape(_) | Error::DimensionMismatch { .. } => QgStatus::Shape,
        Error::InvalidPlan(_) | Error::InvalidArgument(_) => QgStatus::InvalidArgument,
        Error::State(_) => QgStatus::State,
        Error::Format(_) => QgStatus::Format,
        Error::Io { .. } | Error::Csv { .. } => QgStatus::Io,
    }
}

struct Failure(QgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QgStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            QgStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QgStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<(), Failure> {
    if expected != got {
        return Err(Failure(QgStatus::Shape, format!("{what}: expected length {expected}, got {got}")));
    }
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Quantizes a row-major `rows x cols` float matrix. `cols` must be a
/// multiple of 32.
///
/// # Safety
/// `values` must point to `rows * cols` floats and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_quantize(
    values: *const f32,
    rows: usize,
    cols: usize,
    out: *mut *mut QgMatrix,
) -> QgStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(QgStatus::Shape, "rows * cols overflows".into()))?;
        let values = slice(values, n, "values")?;
        let m = QuantMatrixQ4::quantize(rows, cols, values)?;
        out_ptr(out, QgMatrix { inner: m.into() })
    })
}

/// Reads a `.qmat` file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_load(path: *const c_char, out: *mut *mut QgMatrix) -> QgStatus {
    guard(|| {
        let m = qmat::read_file(c_str(path, "path")?)?;
        out_ptr(out, QgMatrix { inner: m.into() })
    })
}

/// Writes `matrix` as a `.qmat` file.
///
/// # Safety
/// `matrix` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_save(matrix: *const QgMatrix, path: *const c_char) -> QgStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        qmat::write_file(c_str(path, "path")?, &m.inner.to_matrix())?;
        Ok(())
    })
}

/// Row count, or 0 for NULL.
///
/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_rows(matrix: *const QgMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.rows())
}

/// Column count, or 0 for NULL.
///
/// # Safety
/// `matrix` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_cols(matrix: *const QgMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.inner.cols())
}

/// # Safety
/// `matrix` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qg_matrix_free(matrix: *mut QgMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Starts a pool of `threads` workers under `policy` (a [`QgPolicy`]).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qg_executor_new(threads: usize, policy: u32, out: *mut *mut QgExecutor) -> QgStatus {
    guard(|| {
        let policy = match policy {
            0 => NumaPolicy::BalancingOn,
            1 => NumaPolicy::AllOff,
            2 => NumaPolicy::CoreBinding,
            3 => NumaPolicy::MemoryInterleave,
            other => return Err(Failure(QgStatus::InvalidArgument, format!("unknown policy {other}"))),
        };
        let exec = Executor::new(threads, policy)?;
        out_ptr(out, QgExecutor { inner: exec })
    })
}

/// Number of placement warnings the executor raised on this host.
///
/// # Safety
/// `exec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qg_executor_warning_count(exec: *const QgExecutor) -> usize {
    exec.as_ref().map_or(0, |e| e.inner.report().warnings.len())
}

/// Re-lays `matrix` out for `exec` (per-worker shards under memory
/// interleaving). Results are unchanged.
///
/// # Safety
/// Both arguments must be live handles.
#[no_mangle]
pub unsafe extern "C" fn qg_executor_place(exec: *const QgExecutor, matrix: *mut QgMatrix) -> QgStatus {
    guard(|| {
        let exec = exec.as_ref().ok_or_else(|| null("executor"))?;
        let m = matrix.as_mut().ok_or_else(|| null("matrix"))?;
        m.inner = exec.inner.place(m.inner.to_matrix())?;
        Ok(())
    })
}

/// # Safety
/// `exec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qg_executor_free(exec: *mut QgExecutor) {
    if !exec.is_null() {
        drop(Box::from_raw(exec));
    }
}

/// Runs `f` on `exec`, or on a serial executor when `exec` is NULL.
unsafe fn with_executor<R>(exec: *const QgExecutor, f: impl FnOnce(&Executor) -> R) -> R {
    match exec.as_ref() {
        Some(e) => f(&e.inner),
        None => f(&Executor::serial()),
    }
}

/// `y = A x` with `x` quantized to Q8 on the fly. `exec` may be NULL to
/// run on the calling thread.
///
/// # Safety
/// `matrix` must be live; `x` must hold `x_len` floats and `y` `y_len`.
#[no_mangle]
pub unsafe extern "C" fn qg_gemv(
    exec: *const QgExecutor,
    matrix: *const QgMatrix,
    x: *const f32,
    x_len: usize,
    y: *mut f32,
    y_len: usize,
) -> QgStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        let x = slice(x, x_len, "x")?;
        let y = slice_mut(y, y_len, "y")?;
        check_len("y", m.inner.rows(), y_len)?;
        let out = with_executor(exec, |e| e.gemv(&m.inner, x))?;
        y.copy_from_slice(&out);
        Ok(())
    })
}

/// Thin GEMM over `batch` column-major input vectors of length `cols`.
/// `y` receives `rows * batch` floats, also column-major. Column `j` equals
/// `qg_gemv` on column `j` bit for bit.
///
/// # Safety
/// `matrix` must be live; `x` must hold `cols * batch` floats and `y`
/// `y_len`.
#[no_mangle]
pub unsafe extern "C" fn qg_gemm_thin(
    exec: *const QgExecutor,
    matrix: *const QgMatrix,
    x: *const f32,
    cols: usize,
    batch: usize,
    y: *mut f32,
    y_len: usize,
) -> QgStatus {
    guard(|| {
        let m = matrix.as_ref().ok_or_else(|| null("matrix"))?;
        let n = cols
            .checked_mul(batch)
            .ok_or_else(|| Failure(QgStatus::Shape, "cols * batch overflows".into()))?;
        let x = ThinMatrix::new(cols, batch, slice(x, n, "x")?.to_vec())?;
        let y = slice_mut(y, y_len, "y")?;
        check_len("y", m.inner.rows() * batch, y_len)?;
        let out = with_executor(exec, |e| e.gemm_thin(&m.inner, &x))?;
        y.copy_from_slice(out.values());
        Ok(())
    })
}

/// Builds a seeded decoder for a preset name (`toy` or `llama8b-layer`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_new(preset: *const c_char, seed: u64, out: *mut *mut QgDecoder) -> QgStatus {
    guard(|| {
        let model = ToyDecoder::new(LayerShapes::preset(c_str(preset, "preset")?)?, seed)?;
        out_ptr(out, QgDecoder { inner: model })
    })
}

/// Builds a seeded decoder with explicit shapes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_new_shapes(
    d_model: usize,
    d_ff: usize,
    n_layers: usize,
    seed: u64,
    out: *mut *mut QgDecoder,
) -> QgStatus {
    guard(|| {
        let model = ToyDecoder::new(LayerShapes::new(d_model, d_ff, n_layers)?, seed)?;
        out_ptr(out, QgDecoder { inner: model })
    })
}

/// Lays the decoder weights out for `exec`.
///
/// # Safety
/// Both arguments must be live handles.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_place(decoder: *mut QgDecoder, exec: *const QgExecutor) -> QgStatus {
    guard(|| {
        let d = decoder.as_mut().ok_or_else(|| null("decoder"))?;
        let exec = exec.as_ref().ok_or_else(|| null("executor"))?;
        d.inner.place_on(&exec.inner)?;
        Ok(())
    })
}

/// Runs a fresh prompt of `prompt_len` tokens. Optionally returns the
/// throughput and the final token's hidden state (`d_model` floats).
///
/// # Safety
/// `decoder` must be live; `exec` NULL or live; `tokens_per_second` NULL or
/// writable; `hidden` NULL or pointing to `hidden_len` floats.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_prefill(
    decoder: *mut QgDecoder,
    exec: *const QgExecutor,
    prompt_len: usize,
    tokens_per_second: *mut f64,
    hidden: *mut f32,
    hidden_len: usize,
) -> QgStatus {
    guard(|| {
        let d = decoder.as_mut().ok_or_else(|| null("decoder"))?;
        if !hidden.is_null() {
            check_len("hidden", d.inner.shapes().d_model, hidden_len)?;
        }
        let (states, stats) = with_executor(exec, |e| d.inner.prefill(e, prompt_len))?;
        if !hidden.is_null() {
            slice_mut(hidden, hidden_len, "hidden")?.copy_from_slice(states.column(prompt_len - 1));
        }
        if let Some(t) = tokens_per_second.as_mut() {
            *t = stats.tokens_per_second()?;
        }
        Ok(())
    })
}

/// Generates `n_tokens` after a prefill.
///
/// # Safety
/// `decoder` must be live; `exec` NULL or live; `tokens_per_second` NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_generate(
    decoder: *mut QgDecoder,
    exec: *const QgExecutor,
    n_tokens: usize,
    tokens_per_second: *mut f64,
) -> QgStatus {
    guard(|| {
        let d = decoder.as_mut().ok_or_else(|| null("decoder"))?;
        let stats = with_executor(exec, |e| d.inner.generate(e, n_tokens))?;
        if let Some(t) = tokens_per_second.as_mut() {
            *t = stats.tokens_per_second()?;
        }
        Ok(())
    })
}

/// Tokens held in the KV cache, or 0 for NULL.
///
/// # Safety
/// `decoder` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_kv_len(decoder: *const QgDecoder) -> usize {
    decoder.as_ref().map_or(0, |d| d.inner.kv_len())
}

/// Writes the decoder as `.qmat` files plus a manifest into `dir`.
///
/// # Safety
/// `decoder` must be live; `dir` and `name` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_export(
    decoder: *const QgDecoder,
    dir: *const c_char,
    name: *const c_char,
) -> QgStatus {
    guard(|| {
        let d = decoder.as_ref().ok_or_else(|| null("decoder"))?;
        d.inner.export(c_str(dir, "dir")?, c_str(name, "name")?)?;
        Ok(())
    })
}

/// # Safety
/// `decoder` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qg_decoder_free(decoder: *mut QgDecoder) {
    if !decoder.is_null() {
        drop(Box::from_raw(decoder));
    }
}
