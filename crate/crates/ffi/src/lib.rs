//! C interface to the k-monotone density estimators.
//!
//! Samples and fits live behind opaque handles created and destroyed by the
//! library. Every function returns a [`KmStatus`]; on failure a description
//! is available from [`km_last_error_message`] on the same thread.
//! Panics never cross the boundary: they are caught and reported as
//! [`KmStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kmono::fitfile::FitFile;
use kmono::minimax;
use kmono::{lse, mle, FitOptions, FitResult, InversionInputs, KmError, Sample};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    /// The density vanishes at an observation.
    SupportDeficient = 3,
    /// The solver stopped before its certificate met the tolerance. The fit
    /// handle is still produced and must be freed.
    NotConverged = 4,
    Numerical = 5,
    Io = 6,
    /// A bug inside the library; the message carries the panic text.
    Internal = 7,
}

/// Opaque sample handle.
pub struct KmSample(Sample);

/// Opaque fit handle.
pub struct KmFit(FitResult);

/// Solver controls. Obtain defaults from [`km_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KmFitOptions {
    pub tol: f64,
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    pub prune_weight: f64,
    pub grid_density: usize,
    /// Search ceiling as a multiple of the sample maximum; zero or negative
    /// selects `2k`.
    pub search_upper_factor: f64,
}

/// Fit diagnostics. Fields that only apply to the least squares estimator
/// are NaN for maximum likelihood fits.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KmDiagnostics {
    pub objective: f64,
    pub max_gradient: f64,
    pub atom_residual: f64,
    pub mass: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_fenchel_gap: f64,
    pub stationarity_residual: f64,
    pub scale: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let text = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn status_of(err: &KmError) -> KmStatus {
    match err {
        KmError::InvalidArgument(_) | KmError::InvalidPerturbation { .. } => KmStatus::InvalidArgument,
        KmError::SupportDeficient { .. } => KmStatus::SupportDeficient,
        KmError::Parse { .. } | KmError::Io(_) => KmStatus::Io,
        KmError::Numerical(_) => KmStatus::Numerical,
    }
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<KmStatus, (KmStatus, String)>) -> KmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => {
            if status == KmStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal error: {msg}"));
            KmStatus::Internal
        }
    }
}

type Failure = (KmStatus, String);

fn lib(err: KmError) -> Failure {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> Failure {
    (KmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message describing the most recent failure on this thread, or an empty
/// string. The pointer stays valid until the next call on the thread.
#[no_mangle]
pub extern "C" fn km_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `len` observations into a new sample.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_sample_new(values: *const f64, len: usize, out: *mut *mut KmSample) -> KmStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let data = std::slice::from_raw_parts(values, len).to_vec();
        let sample = Sample::new(data).map_err(lib)?;
        write(out, Box::into_raw(Box::new(KmSample(sample))), "out")?;
        Ok(KmStatus::Ok)
    })
}

/// # Safety
/// `sample` must come from [`km_sample_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_sample_free(sample: *mut KmSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Number of observations, or zero for a null handle.
///
/// # Safety
/// `sample` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_sample_len(sample: *const KmSample) -> usize {
    sample.as_ref().map_or(0, |s| s.0.len())
}

#[no_mangle]
pub extern "C" fn km_fit_options_default() -> KmFitOptions {
    let d = FitOptions::default();
    KmFitOptions {
        tol: d.tol,
        max_outer_iter: d.max_outer_iter,
        max_inner_iter: d.max_inner_iter,
        prune_weight: d.prune_weight,
        grid_density: d.grid_density,
        search_upper_factor: 0.0,
    }
}

fn to_options(o: &KmFitOptions) -> FitOptions {
    FitOptions {
        tol: o.tol,
        max_outer_iter: o.max_outer_iter,
        max_inner_iter: o.max_inner_iter,
        prune_weight: o.prune_weight,
        grid_density: o.grid_density,
        search_upper_factor: (o.search_upper_factor > 0.0).then_some(o.search_upper_factor),
    }
}

unsafe fn fit_with(
    sample: *const KmSample,
    k: u32,
    options: *const KmFitOptions,
    out: *mut *mut KmFit,
    solver: fn(&Sample, u32, &FitOptions) -> kmono::Result<FitResult>,
) -> KmStatus {
    guard(|| {
        let sample = deref(sample, "sample")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let opts = options.as_ref().map_or_else(FitOptions::default, to_options);
        let fit = solver(&sample.0, k, &opts).map_err(lib)?;
        let converged = fit.converged;
        let max_gradient = fit.max_gradient;
        out.write(Box::into_raw(Box::new(KmFit(fit))));
        if converged {
            Ok(KmStatus::Ok)
        } else {
            Err((KmStatus::NotConverged, format!("not converged, certificate {max_gradient:e}")))
        }
    })
}

/// Maximum likelihood fit. `options` may be null for the defaults.
///
/// # Safety
/// `sample` must be a live handle, `options` null or readable, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_mle(
    sample: *const KmSample,
    k: u32,
    options: *const KmFitOptions,
    out: *mut *mut KmFit,
) -> KmStatus {
    fit_with(sample, k, options, out, mle::fit_mle)
}

/// Least squares fit. `options` may be null for the defaults.
///
/// # Safety
/// As [`km_fit_mle`].
#[no_mangle]
pub unsafe extern "C" fn km_fit_lse(
    sample: *const KmSample,
    k: u32,
    options: *const KmFitOptions,
    out: *mut *mut KmFit,
) -> KmStatus {
    fit_with(sample, k, options, out, lse::fit_lse)
}

/// Loads a fit from fit-file JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_from_json(json: *const c_char, out: *mut *mut KmFit) -> KmStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (KmStatus::InvalidArgument, format!("json is not UTF-8: {e}")))?;
        let fit = FitFile::from_json(text).and_then(|f| f.to_fit_result()).map_err(lib)?;
        write(out, Box::into_raw(Box::new(KmFit(fit))), "out")?;
        Ok(KmStatus::Ok)
    })
}

/// # Safety
/// `fit` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_fit_free(fit: *mut KmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of support points, or zero for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_fit_num_atoms(fit: *const KmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.num_atoms())
}

/// Order `k` of the fit, or zero for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn km_fit_order(fit: *const KmFit) -> u32 {
    fit.as_ref().map_or(0, |f| f.0.mixture.k())
}

/// Copies the support points and weights into caller buffers of length
/// `capacity`, which must be at least [`km_fit_num_atoms`].
///
/// # Safety
/// `support` and `weights` must each point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn km_fit_atoms(
    fit: *const KmFit,
    support: *mut f64,
    weights: *mut f64,
    capacity: usize,
) -> KmStatus {
    guard(|| {
        let g = &deref(fit, "fit")?.0.mixture;
        if support.is_null() || weights.is_null() {
            return Err(null("output buffer"));
        }
        let m = g.support().len();
        if capacity < m {
            return Err((KmStatus::InvalidArgument, format!("capacity {capacity} is below the {m} atoms")));
        }
        ptr::copy_nonoverlapping(g.support().as_ptr(), support, m);
        ptr::copy_nonoverlapping(g.weights().as_ptr(), weights, m);
        Ok(KmStatus::Ok)
    })
}

/// Fitted density at `x >= 0`.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_eval(fit: *const KmFit, x: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let fit = deref(fit, "fit")?;
        if !(x >= 0.0) {
            return Err((KmStatus::InvalidArgument, format!("x must be nonnegative, got {x}")));
        }
        write(out, fit.0.mixture.eval(x), "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Fitted mixing distribution `F̂(t)` recovered through the inversion
/// formula (the left limit at an atom).
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_mixing_cdf(fit: *const KmFit, t: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let g = &deref(fit, "fit")?.0.mixture;
        let inputs = g.inversion_inputs(t).map_err(lib)?;
        let value = kmono::invert_to_mixing(&inputs, g.k(), t).map_err(lib)?;
        write(out, value, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_diagnostics(fit: *const KmFit, out: *mut KmDiagnostics) -> KmStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        let diag = KmDiagnostics {
            objective: f.objective,
            max_gradient: f.max_gradient,
            atom_residual: f.atom_residual,
            mass: f.mass(),
            iterations: f.iterations,
            converged: f.converged,
            min_fenchel_gap: f.min_fenchel_gap.unwrap_or(f64::NAN),
            stationarity_residual: f.stationarity_residual.unwrap_or(f64::NAN),
            scale: f.scale.unwrap_or(f64::NAN),
        };
        write(out, diag, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Serializes the fit as fit-file JSON. Release the string with
/// [`km_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn km_fit_to_json(fit: *const KmFit, out: *mut *mut c_char) -> KmStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        let text = FitFile::from_fit(f, None).to_json();
        let c = CString::new(text).map_err(|e| (KmStatus::Internal, e.to_string()))?;
        write(out, c.into_raw(), "out")?;
        Ok(KmStatus::Ok)
    })
}

/// # Safety
/// `s` must come from [`km_fit_to_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn km_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Kernel `k (a - x)_+^{k-1} / a^k`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_eval_kernel(k: u32, a: f64, x: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let v = kmono::eval_kernel(k, a, x).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Envelope `(1/x)(1 - 1/k)^{k-1}` of k-monotone densities.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_density_bound(k: u32, x: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let v = kmono::density_bound(k, x).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Mixing distribution at `t` from `G(t)` and `g(t), ..., g^{(k-1)}(t)`
/// (`num_derivatives` must equal `k`).
///
/// # Safety
/// `derivatives` must point to `num_derivatives` readable doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_invert_to_mixing(
    k: u32,
    t: f64,
    cdf: f64,
    derivatives: *const f64,
    num_derivatives: usize,
    out: *mut f64,
) -> KmStatus {
    guard(|| {
        if derivatives.is_null() {
            return Err(null("derivatives"));
        }
        let inputs = InversionInputs {
            cdf,
            derivatives: std::slice::from_raw_parts(derivatives, num_derivatives).to_vec(),
        };
        let v = kmono::invert_to_mixing(&inputs, k, t).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Constant `d_{k,j}` of the minimax lower bound.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_d_kj(k: u32, j: u32, out: *mut f64) -> KmStatus {
    guard(|| {
        let v = minimax::d_kj(k, j).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Lower bound for estimating `g^{(j)}(x_0)` from `g_0(x_0)` and
/// `g_0^{(k)}(x_0)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_minimax_bound(k: u32, j: u32, g0: f64, gk: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let v = minimax::minimax_bound(k, j, g0, gk).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}

/// Lower bound for estimating the mixing distribution at `x_0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn km_mixing_bound(k: u32, x0: f64, g0: f64, gk: f64, out: *mut f64) -> KmStatus {
    guard(|| {
        let v = minimax::mixing_bound(k, x0, g0, gk).map_err(lib)?;
        write(out, v, "out")?;
        Ok(KmStatus::Ok)
    })
}
