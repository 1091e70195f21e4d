//! C ABI for the mesh-free PDE solver.
//!
//! The surface is deliberately small: open an experiment from a config
//! file, train it (or load a checkpoint), evaluate fitted values, oracle
//! values and control surfaces, and save checkpoints. Experiments are
//! opaque handles; every call returns a status code and the last error
//! message is retrievable per thread.
//!
//! The C header is generated into `include/dgm_capi.h` at build time.

use dgm::cli::init_networks;
use dgm::config::{load_config, ExperimentConfig};
use dgm::network::DgmParams;
use dgm::residuals::Evaluator;
use dgm::training::{checkpoint_load, checkpoint_save, train, Checkpoint};
use dgm::DgmError;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};

/// Status code of every C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Configuration or argument error.
    Config = 3,
    /// Numerical failure (non-finite loss, domain violation, ...).
    Numerical = 4,
    /// File-system failure.
    Io = 5,
    /// The requested quantity is not defined for this problem.
    Unsupported = 6,
    /// The experiment has no trained parameters yet.
    NotTrained = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &DgmError) -> DgmStatus {
    match err {
        DgmError::Config(_) | DgmError::InvalidArgument(_) | DgmError::Dimension(_) => {
            DgmStatus::Config
        }
        DgmError::Checkpoint(_) | DgmError::EmptyBatch(_) => DgmStatus::Config,
        DgmError::Io(_) => DgmStatus::Io,
        DgmError::NonFinite { .. } | DgmError::Domain { .. } | DgmError::Numerical(_) => {
            DgmStatus::Numerical
        }
    }
}

/// Opaque experiment handle: configuration plus (once trained or loaded)
/// the fitted networks.
pub struct DgmExperiment {
    config: ExperimentConfig,
    nets: Option<Vec<DgmParams>>,
    evaluator: Evaluator,
}

/// # Safety
/// `path` must be a valid NUL-terminated string.
unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, DgmStatus> {
    if path.is_null() {
        set_error("null path argument");
        return Err(DgmStatus::NullArgument);
    }
    match unsafe { CStr::from_ptr(path) }.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(DgmStatus::InvalidUtf8)
        }
    }
}

/// Opens an experiment from a config file.
///
/// On success writes a heap-allocated handle to `out`; release it with
/// `dgm_experiment_free`.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_open(
    config_path: *const c_char,
    out: *mut *mut DgmExperiment,
) -> DgmStatus {
    if out.is_null() {
        set_error("null output handle");
        return DgmStatus::NullArgument;
    }
    let path = match unsafe { path_arg(config_path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_config(&path) {
        Ok(config) => {
            let handle = Box::new(DgmExperiment {
                config,
                nets: None,
                evaluator: Evaluator::new(),
            });
            unsafe { *out = Box::into_raw(handle) };
            DgmStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Releases an experiment handle. Null is a no-op.
///
/// # Safety
/// `exp` must be a handle returned by `dgm_experiment_open` (or null) that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_free(exp: *mut DgmExperiment) {
    if !exp.is_null() {
        drop(unsafe { Box::from_raw(exp) });
    }
}

unsafe fn experiment<'a>(exp: *mut DgmExperiment) -> Result<&'a mut DgmExperiment, DgmStatus> {
    if exp.is_null() {
        set_error("null experiment handle");
        return Err(DgmStatus::NullArgument);
    }
    Ok(unsafe { &mut *exp })
}

/// Number of unknown functions (networks) of the experiment's problem.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_unknowns(exp: *mut DgmExperiment) -> usize {
    match unsafe { experiment(exp) } {
        Ok(e) => e.config.problem.n_unknowns,
        Err(_) => 0,
    }
}

/// Spatial dimension of the experiment's problem.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_dim(exp: *mut DgmExperiment) -> usize {
    match unsafe { experiment(exp) } {
        Ok(e) => e.config.problem.domain.dim(),
        Err(_) => 0,
    }
}

/// Trains the experiment per its configuration, replacing any previously
/// trained parameters.
///
/// # Safety
/// `exp` must be a live experiment handle.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_train(exp: *mut DgmExperiment) -> DgmStatus {
    let e = match unsafe { experiment(exp) } {
        Ok(e) => e,
        Err(s) => return s,
    };
    let mut nets = init_networks(&e.config);
    match train(&e.config.problem, &mut nets, &e.config.train, &e.config.deriv) {
        Ok(out) => {
            e.nets = Some(nets);
            if let Some(diag) = out.aborted {
                set_error(&diag);
                return DgmStatus::Numerical;
            }
            DgmStatus::Ok
        }
        Err(err) => {
            set_error(&err.to_string());
            status_of(&err)
        }
    }
}

/// Loads trained parameters from a checkpoint file.
///
/// # Safety
/// `exp` must be a live experiment handle; `path` a valid NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_load(
    exp: *mut DgmExperiment,
    path: *const c_char,
) -> DgmStatus {
    let e = match unsafe { experiment(exp) } {
        Ok(e) => e,
        Err(s) => return s,
    };
    let path = match unsafe { path_arg(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    match checkpoint_load(Path::new(&path)) {
        Ok(ckpt) => {
            if ckpt.problem_id != e.config.problem.id() {
                set_error(&format!(
                    "checkpoint holds `{}`, experiment describes `{}`",
                    ckpt.problem_id,
                    e.config.problem.id()
                ));
                return DgmStatus::Config;
            }
            e.nets = Some(ckpt.nets);
            DgmStatus::Ok
        }
        Err(err) => {
            set_error(&err.to_string());
            status_of(&err)
        }
    }
}

/// Saves the trained parameters to a checkpoint file.
///
/// # Safety
/// `exp` must be a live experiment handle; `path` a valid NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_save(
    exp: *mut DgmExperiment,
    path: *const c_char,
) -> DgmStatus {
    let e = match unsafe { experiment(exp) } {
        Ok(e) => e,
        Err(s) => return s,
    };
    let path = match unsafe { path_arg(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let Some(nets) = &e.nets else {
        set_error("experiment has no trained parameters");
        return DgmStatus::NotTrained;
    };
    let ckpt = Checkpoint {
        problem_id: e.config.problem.id().to_string(),
        coefficients: e.config.problem.coefficients(),
        nets: nets.clone(),
        adam: Vec::new(),
    };
    match checkpoint_save(&ckpt, Path::new(&path)) {
        Ok(()) => DgmStatus::Ok,
        Err(err) => {
            set_error(&err.to_string());
            status_of(&err)
        }
    }
}

unsafe fn point_arg<'a>(
    e: &DgmExperiment,
    x: *const f64,
    dim: usize,
) -> Result<&'a [f64], DgmStatus> {
    if x.is_null() {
        set_error("null coordinate pointer");
        return Err(DgmStatus::NullArgument);
    }
    if dim != e.config.problem.domain.dim() {
        set_error(&format!(
            "point has {dim} coordinates, problem is {}-dimensional",
            e.config.problem.domain.dim()
        ));
        return Err(DgmStatus::Config);
    }
    Ok(unsafe { std::slice::from_raw_parts(x, dim) })
}

/// Fitted value of unknown `unknown` at `(t, x)`.
///
/// # Safety
/// `exp` must be a live experiment handle; `x` must point to `dim` doubles;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_value(
    exp: *mut DgmExperiment,
    unknown: usize,
    t: f64,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> DgmStatus {
    let e = match unsafe { experiment(exp) } {
        Ok(e) => e,
        Err(s) => return s,
    };
    if out.is_null() {
        set_error("null output pointer");
        return DgmStatus::NullArgument;
    }
    let xs = match unsafe { point_arg(e, x, dim) } {
        Ok(s) => s,
        Err(s) => return s,
    };
    let Some(nets) = &e.nets else {
        set_error("experiment has no trained parameters");
        return DgmStatus::NotTrained;
    };
    if unknown >= nets.len() {
        set_error(&format!("unknown index {unknown} out of range"));
        return DgmStatus::Config;
    }
    match e.evaluator.value(&nets[unknown], t, xs) {
        Ok(v) => {
            unsafe { *out = v };
            DgmStatus::Ok
        }
        Err(err) => {
            set_error(&err.to_string());
            status_of(&err)
        }
    }
}

/// Closed-form value of unknown `unknown` at `(t, x)`, when one exists.
///
/// # Safety
/// `exp` must be a live experiment handle; `x` must point to `dim` doubles;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dgm_experiment_oracle(
    exp: *mut DgmExperiment,
    unknown: usize,
    t: f64,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> DgmStatus {
    let e = match unsafe { experiment(exp) } {
        Ok(e) => e,
        Err(s) => return s,
    };
    if out.is_null() {
        set_error("null output pointer");
        return DgmStatus::NullArgument;
    }
    let xs = match unsafe { point_arg(e, x, dim) } {
        Ok(s) => s,
        Err(s) => return s,
    };
    match e.config.problem.oracle_value(unknown, t, xs) {
        Some(v) => {
            unsafe { *out = v };
            DgmStatus::Ok
        }
        None => {
            set_error("problem has no closed-form solution");
            DgmStatus::Unsupported
        }
    }
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes (or be null to query the
/// length).
#[no_mangle]
pub unsafe extern "C" fn dgm_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                // Always terminate.
                *buf.add(n - 1) = 0;
            }
        }
        bytes.len() - 1
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn dgm_status_name(status: DgmStatus) -> *const c_char {
    let name: &'static CStr = match status {
        DgmStatus::Ok => c"ok",
        DgmStatus::NullArgument => c"null argument",
        DgmStatus::InvalidUtf8 => c"invalid utf-8",
        DgmStatus::Config => c"configuration error",
        DgmStatus::Numerical => c"numerical failure",
        DgmStatus::Io => c"io error",
        DgmStatus::Unsupported => c"unsupported",
        DgmStatus::NotTrained => c"not trained",
    };
    name.as_ptr()
}
