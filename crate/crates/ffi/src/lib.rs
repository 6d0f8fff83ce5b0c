//! C ABI over `ctmc-move`.
//!
//! Objects cross the boundary as opaque handles created by `cm_*_new` style
//! functions and released with the matching `cm_*_free`. Every fallible call
//! returns a [`CmStatus`]; on failure [`cm_last_error`] describes the error
//! for the calling thread. Strings returned as `char *` are owned by the
//! caller and released with [`cm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ctmc_move::covariates::{DesignContext, Layers, ModelSpec, INTERCEPT_LABEL};
use ctmc_move::ctmc::{path_log_likelihood, simulate_path, CtmcPath};
use ctmc_move::inference::{fit_poisson_weighted, FitResult, Penalty};
use ctmc_move::pipeline::{expand, ExpandedData};
use ctmc_move::raster::{read_ascii_grid, RasterGrid};
use ctmc_move::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Internal = 6,
    Panic = 7,
}

pub struct CmGrid(RasterGrid);
pub struct CmContext(DesignContext);
pub struct CmPath(CtmcPath);
pub struct CmExpanded(ExpandedData);
pub struct CmFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(bytes).unwrap_or_default());
}

fn status_of(e: &Error) -> CmStatus {
    match e {
        Error::Io { .. } => CmStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::MissingColumn { .. } => CmStatus::Parse,
        Error::LinearAlgebra(_) => CmStatus::Numerical,
        Error::Invariant(_) => CmStatus::Internal,
        _ => CmStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CmStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            CmStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("panic: {msg}"));
            CmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads an ESRI ASCII grid.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_grid_read_ascii(path: *const c_char, out: *mut *mut CmGrid) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(CmGrid(read_ascii_grid(c_str(path, "path")?)?));
        Ok(())
    })
}

/// # Safety
/// `grid`, `nrows` and `ncols` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cm_grid_shape(grid: *const CmGrid, nrows: *mut usize, ncols: *mut usize) -> CmStatus {
    guard(|| {
        let g = deref(grid, "grid")?.0.geometry();
        *out_ptr(nrows, "nrows")? = g.nrows;
        *out_ptr(ncols, "ncols")? = g.ncols;
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cm_grid_free(grid: *mut CmGrid) {
    free(grid)
}

/// Builds a design context from a JSON model specification, the state-space
/// grid and `n_layers` named covariate grids. The inputs are copied; the
/// caller keeps ownership of the grid handles.
///
/// # Safety
/// `names` and `layers` must each point to `n_layers` valid entries.
#[no_mangle]
pub unsafe extern "C" fn cm_context_new(
    model_json: *const c_char,
    grid: *const CmGrid,
    names: *const *const c_char,
    layers: *const *const CmGrid,
    n_layers: usize,
    out: *mut *mut CmContext,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = ModelSpec::from_json(c_str(model_json, "model_json")?)?;
        let grid = deref(grid, "grid")?;
        let names = slice(names, n_layers, "names")?;
        let layers = slice(layers, n_layers, "layers")?;
        let mut map = Layers::new();
        for (&n, &l) in names.iter().zip(layers) {
            map.insert(c_str(n, "layer name")?.to_string(), deref(l, "layer")?.0.clone());
        }
        *out = boxed(CmContext(DesignContext::new(spec, grid.0.clone(), &map, None)?));
        Ok(())
    })
}

/// Number of design columns, or 0 for a null handle.
///
/// # Safety
/// `ctx` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_context_n_columns(ctx: *const CmContext) -> usize {
    ctx.as_ref().map_or(0, |c| c.0.n_columns())
}

/// # Safety
/// `ctx` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cm_context_free(ctx: *mut CmContext) {
    free(ctx)
}

/// Simulates a path from the cell at (`row`, `col`), row 0 at the southern
/// edge (the last line of an ASCII grid file).
///
/// # Safety
/// `coefficients` must point to `n_coefficients` values.
#[no_mangle]
pub unsafe extern "C" fn cm_simulate(
    ctx: *const CmContext,
    coefficients: *const f64,
    n_coefficients: usize,
    row: usize,
    col: usize,
    start_time: f64,
    duration: f64,
    seed: u64,
    out: *mut *mut CmPath,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ctx = &deref(ctx, "ctx")?.0;
        let beta = slice(coefficients, n_coefficients, "coefficients")?;
        let start = ctx
            .grid()
            .geometry()
            .cell_at(row, col)
            .ok_or_else(|| Error::InvalidArgument(format!("cell ({row}, {col}) is outside the grid")))?;
        let sim = simulate_path(ctx, beta, start, start_time, duration, seed)?;
        *out = boxed(CmPath(sim.path));
        Ok(())
    })
}

/// Number of cells visited, or 0 for a null handle.
///
/// # Safety
/// `path` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_path_n_cells(path: *const CmPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.cells().len())
}

/// Number of transitions, or 0 for a null handle.
///
/// # Safety
/// `path` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_path_n_transitions(path: *const CmPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.n_transitions())
}

/// # Safety
/// `coefficients` must point to `n_coefficients` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_path_log_likelihood(
    path: *const CmPath,
    ctx: *const CmContext,
    coefficients: *const f64,
    n_coefficients: usize,
    censor_final: bool,
    out: *mut f64,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let beta = slice(coefficients, n_coefficients, "coefficients")?;
        *out = path_log_likelihood(&deref(path, "path")?.0, &deref(ctx, "ctx")?.0, beta, censor_final)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cm_path_free(path: *mut CmPath) {
    free(path)
}

/// Expands a path into Poisson rows.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cm_expand(
    path: *const CmPath,
    ctx: *const CmContext,
    censor_final: bool,
    out: *mut *mut CmExpanded,
) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(CmExpanded(expand(
            &deref(path, "path")?.0,
            &deref(ctx, "ctx")?.0,
            censor_final,
            0,
        )?));
        Ok(())
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_expanded_n_rows(data: *const CmExpanded) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_rows())
}

/// # Safety
/// `data` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cm_expanded_free(data: *mut CmExpanded) {
    free(data)
}

/// Fits the weighted Poisson model. `l1_lambda` = 0 fits without a
/// penalty; a positive value applies an L1 penalty to every column except
/// the intercept.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cm_fit(data: *const CmExpanded, l1_lambda: f64, out: *mut *mut CmFit) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let data = &deref(data, "data")?.0;
        let penalty = if l1_lambda == 0.0 {
            Penalty::None
        } else {
            Penalty::L1 {
                lambda: l1_lambda,
                penalized: data.labels().iter().map(|l| l != INTERCEPT_LABEL).collect(),
            }
        };
        *out = boxed(CmFit(fit_poisson_weighted(data, &penalty)?));
        Ok(())
    })
}

/// Number of coefficients, or 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_n_coefficients(fit: *const CmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.coefficients.len())
}

/// # Safety
/// `fit` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_converged(fit: *const CmFit) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len != src.len() {
        return Err(Error::Dimension {
            expected: src.len(),
            found: len,
        }
        .into());
    }
    if len > 0 {
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    }
    Ok(())
}

/// Copies the estimates into `buf`, which must hold exactly
/// `cm_fit_n_coefficients` values.
///
/// # Safety
/// `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_coefficients(fit: *const CmFit, buf: *mut f64, len: usize) -> CmStatus {
    guard(|| copy_out(&deref(fit, "fit")?.0.coefficients, buf, len))
}

/// # Safety
/// `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_standard_errors(fit: *const CmFit, buf: *mut f64, len: usize) -> CmStatus {
    guard(|| copy_out(&deref(fit, "fit")?.0.standard_errors, buf, len))
}

/// Serializes the fit as JSON. Release the string with [`cm_string_free`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_to_json(fit: *const CmFit, out: *mut *mut c_char) -> CmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = into_c_string(deref(fit, "fit")?.0.to_json()?);
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn cm_fit_free(fit: *mut CmFit) {
    free(fit)
}
