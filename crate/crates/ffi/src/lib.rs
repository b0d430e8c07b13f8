//! C ABI over the nestadmm solver.
//!
//! Every function returns a [`NestadmmStatus`]; on failure the message is
//! available from [`nestadmm_last_error`] on the same thread. Instances and
//! runs are opaque handles released with their `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nestadmm::config::parse_generator_spec;
use nestadmm::estimator::EstimatorKind;
use nestadmm::generators::generate_instance;
use nestadmm::problem::ProblemInstance;
use nestadmm::solver::{calibrate, run, SolveReport};
use nestadmm::Error;

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NestadmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    NumericalError = 4,
    IoError = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Gradient estimator selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NestadmmEstimator {
    Minibatch = 0,
    Spider = 1,
}

impl From<NestadmmEstimator> for EstimatorKind {
    fn from(e: NestadmmEstimator) -> Self {
        match e {
            NestadmmEstimator::Minibatch => EstimatorKind::Minibatch,
            NestadmmEstimator::Spider => EstimatorKind::Spider,
        }
    }
}

/// A generated problem instance.
pub struct NestadmmInstance {
    problem: ProblemInstance,
}

/// The result of one solver run.
pub struct NestadmmRun {
    report: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(e: &Error) -> NestadmmStatus {
    match e {
        Error::Io(_) | Error::Csv(_) => NestadmmStatus::IoError,
        e if e.exit_code() == 2 => NestadmmStatus::ConfigError,
        _ => NestadmmStatus::NumericalError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (NestadmmStatus, String)>) -> NestadmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NestadmmStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NestadmmStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (NestadmmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (NestadmmStatus, String) {
    (NestadmmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (NestadmmStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), (NestadmmStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (NestadmmStatus, String)> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err((
            NestadmmStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message of the last failed call on this thread; empty if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nestadmm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn nestadmm_status_name(status: NestadmmStatus) -> *const c_char {
    let name: &'static CStr = match status {
        NestadmmStatus::Ok => c"ok",
        NestadmmStatus::NullPointer => c"null pointer",
        NestadmmStatus::InvalidArgument => c"invalid argument",
        NestadmmStatus::ConfigError => c"configuration error",
        NestadmmStatus::NumericalError => c"numerical error",
        NestadmmStatus::IoError => c"io error",
        NestadmmStatus::BufferTooSmall => c"buffer too small",
        NestadmmStatus::Panic => c"panic",
    };
    name.as_ptr()
}

/// Builds an instance from a generator spec in TOML, bare or under a
/// `[generator]` table.
///
/// # Safety
/// `spec_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_instance_from_toml(
    spec_toml: *const c_char,
    out: *mut *mut NestadmmInstance,
) -> NestadmmStatus {
    guard(|| {
        if spec_toml.is_null() {
            return Err(null("spec_toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(spec_toml).to_str().map_err(|e| {
            (
                NestadmmStatus::InvalidArgument,
                format!("spec is not UTF-8: {e}"),
            )
        })?;
        let spec = parse_generator_spec(text).map_err(lib_err)?;
        let problem = generate_instance(&spec).map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(NestadmmInstance { problem })));
        Ok(())
    })
}

/// Dimensions of `x`, of the constraint, and the number of `y` blocks.
///
/// # Safety
/// `instance` must come from [`nestadmm_instance_from_toml`]; the outputs
/// must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_instance_dims(
    instance: *const NestadmmInstance,
    dim_x: *mut usize,
    dim_constraint: *mut usize,
    blocks: *mut usize,
) -> NestadmmStatus {
    guard(|| {
        let p = &deref(instance, "instance")?.problem;
        write(dim_x, p.dim_x(), "dim_x")?;
        write(dim_constraint, p.dim_p(), "dim_constraint")?;
        write(blocks, p.num_blocks(), "blocks")
    })
}

/// Releases an instance. Null is ignored.
///
/// # Safety
/// `instance` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_instance_free(instance: *mut NestadmmInstance) {
    if !instance.is_null() {
        drop(Box::from_raw(instance));
    }
}

/// Calibrates and runs the solver on `instance` with its certified profile.
///
/// `alpha` lies in (0, 1); `epsilon` sets the batch sizes and, when
/// `stop_at_target` is true, the early-stop tolerance.
///
/// # Safety
/// `instance` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_solve(
    instance: *const NestadmmInstance,
    estimator: NestadmmEstimator,
    alpha: f64,
    epsilon: f64,
    iterations: usize,
    seed: u64,
    stop_at_target: bool,
    out: *mut *mut NestadmmRun,
) -> NestadmmStatus {
    guard(|| {
        let problem = &deref(instance, "instance")?.problem;
        if out.is_null() {
            return Err(null("out"));
        }
        let profile = problem.profile.ok_or_else(|| {
            (
                NestadmmStatus::ConfigError,
                "instance carries no profile".to_string(),
            )
        })?;
        let mut cfg = calibrate(
            problem,
            &profile,
            estimator.into(),
            problem.mode(),
            alpha,
            epsilon,
            None,
        )
        .map_err(lib_err)?;
        cfg.iterations = iterations;
        cfg.seed = seed;
        cfg.stop_at = stop_at_target.then_some(epsilon);
        let report = run(problem, &cfg).map_err(lib_err)?;
        out.write(Box::into_raw(Box::new(NestadmmRun { report })));
        Ok(())
    })
}

/// Iterations performed, the total samples drawn, and the index of the
/// returned iterate.
///
/// # Safety
/// `run` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_run_stats(
    run: *const NestadmmRun,
    iterations: *mut usize,
    total_samples: *mut u64,
    output_index: *mut usize,
) -> NestadmmStatus {
    guard(|| {
        let r = &deref(run, "run")?.report;
        write(iterations, r.trace.len() - 1, "iterations")?;
        write(total_samples, r.total_samples, "total_samples")?;
        write(output_index, r.output_index, "output_index")
    })
}

/// Smallest stationarity measure over the run (squared form).
///
/// # Safety
/// `run` must be a live handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_run_best_stationarity(
    run: *const NestadmmRun,
    value: *mut f64,
) -> NestadmmStatus {
    guard(|| {
        write(
            value,
            deref(run, "run")?.report.best_stationarity(),
            "value",
        )
    })
}

/// Copies the returned iterate `x` into `buf` (at least `dim_x` values).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_run_copy_x(
    run: *const NestadmmRun,
    buf: *mut f64,
    len: usize,
) -> NestadmmStatus {
    guard(|| copy_out(deref(run, "run")?.report.x.as_slice(), buf, len))
}

/// Copies the stationarity total of every trace record, starting at the
/// initial point (`iterations + 1` values).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_run_copy_stationarity(
    run: *const NestadmmRun,
    buf: *mut f64,
    len: usize,
) -> NestadmmStatus {
    guard(|| {
        let r = &deref(run, "run")?.report;
        let totals: Vec<f64> = r.trace.iter().map(|t| t.stationarity.total).collect();
        copy_out(&totals, buf, len)
    })
}

/// Releases a run. Null is ignored.
///
/// # Safety
/// `run` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nestadmm_run_free(run: *mut NestadmmRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
