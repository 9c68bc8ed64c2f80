//! C ABI over `cbmoco`.
//!
//! Every function returns a [`CbmStatus`]. On failure a human-readable
//! message is available from [`cbm_last_error_message`] on the same thread
//! until the next call. Handles are opaque and must be released with their
//! `_free` function. Array arguments are row-major `double` buffers whose
//! lengths are implied by the accompanying dimensions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use cbmoco::backprojector::{Backprojector, GradientSampling};
use cbmoco::evaluation::{eval_points, reprojection_error, EvalReport};
use cbmoco::geometry::ProjectionMatrix;
use cbmoco::harness::{run_experiment, ExperimentConfig};
use cbmoco::volume::{ProjectionStack, StackState, Volume, VolumeGrid};
use cbmoco::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Geometry = 4,
    State = 5,
    Format = 6,
    Io = 7,
    Divergence = 8,
    Panic = 9,
    Other = 10,
}

/// Opaque experiment configuration.
pub struct CbmConfig(ExperimentConfig);

/// Opaque evaluation report.
pub struct CbmReport(EvalReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CbmStatus {
    match e {
        Error::Config(_) => CbmStatus::Config,
        Error::Argument(_) | Error::DegenerateReference => CbmStatus::InvalidArgument,
        Error::PointAtInfinity { .. } | Error::Geometry(_) => CbmStatus::Geometry,
        Error::State { .. } => CbmStatus::State,
        Error::Format { .. } | Error::Json(_) => CbmStatus::Format,
        Error::Io(_) => CbmStatus::Io,
        Error::Divergence { .. } => CbmStatus::Divergence,
        Error::Stage { source, .. } => status_of(source),
    }
}

struct Fail(CbmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CbmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            CbmStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(CbmStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(CbmStatus::InvalidArgument, format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    non_null(p, name)?;
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn matrices_arg(p: *const f64, n_views: usize) -> Result<Vec<ProjectionMatrix>, Fail> {
    let flat = unsafe { slice_arg(p, 12 * n_views, "matrices") }?;
    Ok(flat
        .chunks_exact(12)
        .map(|c| ProjectionMatrix::from_row_major(c.try_into().unwrap()))
        .collect())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn cbm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a config from a preset name (`"desk"` or `"paper"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbm_config_from_preset(name: *const c_char, out: *mut *mut CbmConfig) -> CbmStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ExperimentConfig::preset(unsafe { str_arg(name, "name") }?)?;
        unsafe { *out = Box::into_raw(Box::new(CbmConfig(cfg))) };
        Ok(())
    })
}

/// Loads and validates a JSON config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbm_config_from_json_file(path: *const c_char, out: *mut *mut CbmConfig) -> CbmStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = ExperimentConfig::from_json_file(Path::new(unsafe { str_arg(path, "path") }?))?;
        unsafe { *out = Box::into_raw(Box::new(CbmConfig(cfg))) };
        Ok(())
    })
}

/// Sets the seed of the simulated motion.
///
/// # Safety
/// `cfg` must come from a `cbm_config_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn cbm_config_set_seed(cfg: *mut CbmConfig, seed: u64) -> CbmStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        unsafe { (*cfg).0.motion.seed = seed };
        Ok(())
    })
}

/// Sets the number of gradient-descent iterations.
///
/// # Safety
/// `cfg` must come from a `cbm_config_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn cbm_config_set_iterations(cfg: *mut CbmConfig, n_iters: usize) -> CbmStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        let c = unsafe { &mut (*cfg).0 };
        let mut optim = c.estimation.optim;
        optim.n_iters = n_iters;
        optim.validate()?;
        c.estimation.optim = optim;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from a `cbm_config_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn cbm_config_free(cfg: *mut CbmConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Runs simulate → estimate → reconstruct → evaluate, writing artifacts to
/// `out_dir`, and returns the report.
///
/// # Safety
/// `cfg` must be a live config, `out_dir` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbm_run_experiment(
    cfg: *const CbmConfig,
    out_dir: *const c_char,
    out: *mut *mut CbmReport,
) -> CbmStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let dir = unsafe { str_arg(out_dir, "out_dir") }?;
        let report = run_experiment(unsafe { &(*cfg).0 }, Path::new(dir))?;
        unsafe { *out = Box::into_raw(Box::new(CbmReport(report))) };
        Ok(())
    })
}

/// Initial and compensated reprojection error in mm.
///
/// # Safety
/// `report` must be live; `initial_mm` and `final_mm` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cbm_report_rpe(report: *const CbmReport, initial_mm: *mut f64, final_mm: *mut f64) -> CbmStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(initial_mm, "initial_mm")?;
        non_null(final_mm, "final_mm")?;
        let r = unsafe { &(*report).0 };
        unsafe {
            *initial_mm = r.rpe_initial_mm;
            *final_mm = r.rpe_mm;
        }
        Ok(())
    })
}

/// The report as a JSON string; release it with [`cbm_string_free`].
///
/// # Safety
/// `report` must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cbm_report_to_json(report: *const CbmReport, out: *mut *mut c_char) -> CbmStatus {
    guard(|| {
        non_null(report, "report")?;
        non_null(out, "out")?;
        let s = serde_json::to_string(unsafe { &(*report).0 }).map_err(Error::from)?;
        let c = CString::new(s).map_err(|e| Fail(CbmStatus::Other, e.to_string()))?;
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `report` must come from [`cbm_run_experiment`] or be null.
#[no_mangle]
pub unsafe extern "C" fn cbm_report_free(report: *mut CbmReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn cbm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Volume layout for the array entry points; `x` runs fastest.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CbmGrid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl CbmGrid {
    fn to_grid(self) -> Result<VolumeGrid, Fail> {
        let g = VolumeGrid {
            dims: self.dims,
            spacing_mm: self.spacing_mm,
            origin_mm: self.origin_mm,
        };
        g.validate()?;
        Ok(g)
    }
}

unsafe fn filtered_stack(data: *const f64, n_views: usize, rows: usize, cols: usize) -> Result<ProjectionStack, Fail> {
    let d = unsafe { slice_arg(data, n_views * rows * cols, "projections") }?;
    Ok(ProjectionStack::from_data(n_views, rows, cols, 1.0, StackState::RampFiltered, d.to_vec())?)
}

/// Backprojects ramp-filtered projections (`n_views × rows × cols`) with
/// `n_views` row-major 3×4 pixel-unit matrices into `out_volume`.
///
/// # Safety
/// Buffers must hold the element counts implied by the dimensions.
#[no_mangle]
pub unsafe extern "C" fn cbm_backproject(
    projections: *const f64,
    n_views: usize,
    rows: usize,
    cols: usize,
    matrices: *const f64,
    grid: CbmGrid,
    out_volume: *mut f64,
) -> CbmStatus {
    guard(|| {
        let stack = unsafe { filtered_stack(projections, n_views, rows, cols) }?;
        let mats = unsafe { matrices_arg(matrices, n_views) }?;
        let grid = grid.to_grid()?;
        non_null(out_volume, "out_volume")?;
        let vol = Backprojector::new(&stack, GradientSampling::Exact)?.backproject(&mats, &grid)?;
        unsafe { slice::from_raw_parts_mut(out_volume, vol.len()) }.copy_from_slice(&vol.data);
        Ok(())
    })
}

/// Vector–Jacobian product of [`cbm_backproject`] with respect to the
/// matrices: writes `n_views` row-major 3×4 gradients to `out_grad`.
///
/// # Safety
/// Buffers must hold the element counts implied by the dimensions.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cbm_backproject_geometry_vjp(
    projections: *const f64,
    n_views: usize,
    rows: usize,
    cols: usize,
    matrices: *const f64,
    grid: CbmGrid,
    upstream: *const f64,
    out_grad: *mut f64,
) -> CbmStatus {
    guard(|| {
        let stack = unsafe { filtered_stack(projections, n_views, rows, cols) }?;
        let mats = unsafe { matrices_arg(matrices, n_views) }?;
        let grid = grid.to_grid()?;
        let up = unsafe { slice_arg(upstream, grid.len(), "upstream") }?;
        let up = Volume::from_data(grid, up.to_vec())?;
        non_null(out_grad, "out_grad")?;
        let g = Backprojector::new(&stack, GradientSampling::Exact)?.geometry_vjp(&mats, &grid, &up)?;
        let out = unsafe { slice::from_raw_parts_mut(out_grad, 12 * n_views) };
        for (chunk, m) in out.chunks_exact_mut(12).zip(g.views()) {
            for r in 0..3 {
                for c in 0..4 {
                    chunk[4 * r + c] = m[(r, c)];
                }
            }
        }
        Ok(())
    })
}

/// Mean detector distance in mm between the fixed evaluation points
/// projected with `estimated` and `reference` matrices.
///
/// # Safety
/// Both matrix buffers must hold `12 * n_views` values; `out_mm` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbm_reprojection_error(
    estimated: *const f64,
    reference: *const f64,
    n_views: usize,
    pixel_spacing_mm: f64,
    out_mm: *mut f64,
) -> CbmStatus {
    guard(|| {
        let a = unsafe { matrices_arg(estimated, n_views) }?;
        let b = unsafe { matrices_arg(reference, n_views) }?;
        non_null(out_mm, "out_mm")?;
        let e = reprojection_error(&a, &b, &eval_points(), pixel_spacing_mm)?;
        unsafe { *out_mm = e };
        Ok(())
    })
}
