//! C ABI over `poisson-transform`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free`. Every fallible call returns a [`PtStatus`]; on failure
//! the message is available from [`pt_last_error_message`] on the same
//! thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use poisson_transform::model::{uniform_reference, EnergyModel};
use poisson_transform::ncd;
use poisson_transform::objective::{fit_poisson_chi, fit_poisson_joint, PenaltyConfig};
use poisson_transform::quadrature::{exact_loglik, fit_ml, gauss_legendre, DEFAULT_NODES};
use poisson_transform::rng::stream;
use poisson_transform::{chain, Error, FitOptions, FitResult, Kernel, ParamVector, SampleSet, ToyChain, ToyIid};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutsideDomain = 3,
    Numerical = 4,
    Unsupported = 5,
    Panic = 6,
}

pub const PT_MODEL_TOY_CHAIN: u32 = 0;
pub const PT_MODEL_TOY_IID: u32 = 1;

pub const PT_METHOD_ML: u32 = 0;
pub const PT_METHOD_POISSON: u32 = 1;
pub const PT_METHOD_NCD_IID: u32 = 2;
pub const PT_METHOD_NCD_PARAM: u32 = 3;
pub const PT_METHOD_NCD_SEMI: u32 = 4;
pub const PT_METHOD_NCD_IGNORE: u32 = 5;

/// Penalty used by `PT_METHOD_POISSON` on the chain model when none is given.
const DEFAULT_CHI_LAMBDA: f64 = 1e-6;

/// Observed chain: an initial point and `len` observations.
pub struct PtSampleSet {
    inner: SampleSet,
}

/// Result of [`pt_fit`].
pub struct PtFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(PtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::LengthMismatch { .. } => PtStatus::InvalidArgument,
            Error::OutsideDomain { .. } => PtStatus::OutsideDomain,
            Error::Numerical(_) | Error::Diverged { .. } => PtStatus::Numerical,
            Error::MissingSufficientStatistics => PtStatus::Unsupported,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PtStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            PtStatus::Panic
        }
    }
}

fn model_for(code: u32) -> Result<&'static dyn EnergyModel, Failure> {
    match code {
        PT_MODEL_TOY_CHAIN => Ok(&ToyChain),
        PT_MODEL_TOY_IID => Ok(&ToyIid),
        other => Err(Failure(PtStatus::InvalidArgument, format!("unknown model code {other}"))),
    }
}

unsafe fn set_ref<'a>(set: *const PtSampleSet) -> Result<&'a SampleSet, Failure> {
    set.as_ref().map(|s| &s.inner).ok_or_else(|| null("sample set"))
}

/// Copies `len` observations into a new sample set.
///
/// # Safety
/// `points` must point to `len` readable doubles (may be null when `len` is 0);
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_set_new(
    initial: f64,
    points: *const f64,
    len: usize,
    out: *mut *mut PtSampleSet,
) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = if len == 0 {
            Vec::new()
        } else if points.is_null() {
            return Err(null("points"));
        } else {
            std::slice::from_raw_parts(points, len).to_vec()
        };
        let inner = SampleSet::new(poisson_transform::Domain::symmetric_unit(), initial, values)?;
        *out = Box::into_raw(Box::new(PtSampleSet { inner }));
        Ok(())
    })
}

/// Simulates `n` steps of the toy model from `y0` with the given seed.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_chain(
    model: u32,
    theta1: f64,
    theta2: f64,
    n: usize,
    y0: f64,
    seed: u64,
    out: *mut *mut PtSampleSet,
) -> PtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = model_for(model)?;
        let theta = ParamVector::new(vec![theta1, theta2])?;
        let inner = chain::sample_chain(model, &theta, n, y0, &mut stream(seed, &[0]))?;
        *out = Box::into_raw(Box::new(PtSampleSet { inner }));
        Ok(())
    })
}

/// Number of observations (0 for a null handle).
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_set_len(set: *const PtSampleSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Observation `index` (0-based, excluding the initial point).
///
/// # Safety
/// `set` must be null or a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_set_get(set: *const PtSampleSet, index: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let s = set_ref(set)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = s.points().get(index).ok_or_else(|| {
            Failure(PtStatus::InvalidArgument, format!("index {index} out of range (len {})", s.len()))
        })?;
        *out = *v;
        Ok(())
    })
}

/// The initial point `y0`.
///
/// # Safety
/// `set` must be null or a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_set_initial(set: *const PtSampleSet, out: *mut f64) -> PtStatus {
    guard(|| {
        let s = set_ref(set)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.initial();
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_sample_set_free(set: *mut PtSampleSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Exact log-likelihood of the sample under the toy model.
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_exact_loglik(
    model: u32,
    theta1: f64,
    theta2: f64,
    set: *const PtSampleSet,
    out: *mut f64,
) -> PtStatus {
    guard(|| {
        let s = set_ref(set)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = model_for(model)?;
        let rule = gauss_legendre(DEFAULT_NODES, model.domain())?;
        *out = exact_loglik(model, &ParamVector::new(vec![theta1, theta2])?, s, &rule)?;
        Ok(())
    })
}

/// Fits `set` with one of the `PT_METHOD_*` estimators.
///
/// `k` is the reference-to-data ratio of the logistic variants (ignored
/// otherwise). A negative `lambda` selects the penalty by 5-fold
/// cross-validation for `PT_METHOD_NCD_SEMI` and uses the default for
/// `PT_METHOD_POISSON` on the chain model. `seed` drives reference draws.
///
/// # Safety
/// `set` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_fit(
    model: u32,
    method: u32,
    set: *const PtSampleSet,
    k: usize,
    lambda: f64,
    seed: u64,
    out: *mut *mut PtFit,
) -> PtStatus {
    guard(|| {
        let s = set_ref(set)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model_ref = model_for(model)?;
        let opts = FitOptions::default();
        let rule = gauss_legendre(DEFAULT_NODES, model_ref.domain())?;
        let q = uniform_reference(model_ref.domain());
        let data = || ncd::build_dataset(s, &q, k, &mut stream(seed, &[1]));
        let chosen = (lambda >= 0.0).then_some(lambda);
        let inner = match method {
            PT_METHOD_ML => fit_ml(model_ref, s, &rule, &opts)?,
            PT_METHOD_POISSON if model == PT_MODEL_TOY_IID => fit_poisson_joint(model_ref, s, &rule, &opts)?,
            PT_METHOD_POISSON => {
                let kernel = Kernel::from_median(&s.ancestors())?;
                let pen = PenaltyConfig::fixed(chosen.unwrap_or(DEFAULT_CHI_LAMBDA))?;
                fit_poisson_chi(model_ref, s, &rule, kernel, &pen, &opts)?
            }
            PT_METHOD_NCD_IID => ncd::fit_ncd_iid(model_ref, &data()?, &opts)?.to_fit_result(),
            PT_METHOD_NCD_PARAM => ncd::fit_ncd_param(model_ref, &data()?, &opts)?.to_fit_result(),
            PT_METHOD_NCD_IGNORE => ncd::fit_ncd_ignore(model_ref, &data()?, &opts)?.to_fit_result(),
            PT_METHOD_NCD_SEMI => {
                let d = data()?;
                let kernel = Kernel::from_median(&d.ancestors())?;
                let lambda = match chosen {
                    Some(l) => l,
                    None => ncd::select_lambda(
                        model_ref,
                        &d,
                        kernel,
                        &ncd::default_lambda_grid(),
                        ncd::DEFAULT_FOLDS,
                        &opts,
                        &mut stream(seed, &[2]),
                    )?,
                };
                ncd::fit_ncd_semi(model_ref, &d, kernel, lambda, &opts)?.to_fit_result()
            }
            other => return Err(Failure(PtStatus::InvalidArgument, format!("unknown method code {other}"))),
        };
        *out = Box::into_raw(Box::new(PtFit { inner }));
        Ok(())
    })
}

unsafe fn fit_ref<'a>(fit: *const PtFit) -> Result<&'a FitResult, Failure> {
    fit.as_ref().map(|f| &f.inner).ok_or_else(|| null("fit"))
}

/// Writes the two parameter estimates to `out[0..2]`.
///
/// # Safety
/// `fit` must be a live handle; `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_fit_theta(fit: *const PtFit, out: *mut f64) -> PtStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        if out.is_null() {
            return Err(null("out"));
        }
        for (i, v) in f.theta_hat.iter().enumerate() {
            *out.add(i) = *v;
        }
        Ok(())
    })
}

/// Standard errors to `out[0..2]`; `Unsupported` when the method gives none.
///
/// # Safety
/// `fit` must be a live handle; `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn pt_fit_standard_errors(fit: *const PtFit, out: *mut f64) -> PtStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let se = f
            .standard_errors()
            .ok_or_else(|| Failure(PtStatus::Unsupported, "this fit carries no covariance".into()))?;
        for (i, v) in se.iter().enumerate() {
            *out.add(i) = *v;
        }
        Ok(())
    })
}

/// 1 if the fitter converged, 0 otherwise (or for a null handle).
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pt_fit_converged(fit: *const PtFit) -> i32 {
    fit.as_ref().map_or(0, |f| f.inner.converged as i32)
}

/// Maximised objective value.
///
/// # Safety
/// `fit` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pt_fit_objective(fit: *const PtFit, out: *mut f64) -> PtStatus {
    guard(|| {
        let f = fit_ref(fit)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.objective;
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_fit_free(fit: *mut PtFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
