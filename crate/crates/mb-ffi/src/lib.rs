//! C ABI over the core library: opaque handles, integer status codes, and a
//! thread-local error message.  The matching header lives at `include/mb.h`
//! and is regenerated by the build script.
//!
//! Every fallible call returns [`MbStatus`] with `MB_OK == 0`.  Output
//! parameters are zeroed before the work starts, so on failure they hold
//! null/zero rather than garbage; a UTF-8 description of the failure is
//! available from [`mb_last_error_message`] on the same thread until the
//! next failing call.

use mb_core::asymptotics::constants;
use mb_core::ensemble::{validate_spec, EnsembleSpec, ValidationMode};
use mb_core::equilibrium::{solve_coefficients, EquilibriumData};
use mb_core::oracle::{log_det, PrecisionPolicy};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::fmt::Display;
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;

/// Status code returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbStatus {
    /// Success.
    MbOk = 0,
    /// Rejected input: malformed JSON, parameters outside the admissible
    /// windows, mismatched handles.
    MbErrValidation = 1,
    /// The computation itself failed (point outside the support, precision
    /// exhausted, rank-deficient system, internal panic).
    MbErrNumerical = 2,
    /// A required pointer argument was null.
    MbErrNullptr = 3,
    /// A string argument was not valid UTF-8.
    MbErrUtf8 = 4,
}

/// Parsed ensemble description.  Create with [`mb_spec_parse_json`], release
/// with [`mb_spec_free`].
pub struct MbSpec {
    spec: EnsembleSpec,
}

/// Solved equilibrium problem for one spec.  Create with
/// [`mb_equilibrium_solve`], release with [`mb_equilibrium_free`].
pub struct MbEquilibrium {
    data: EquilibriumData,
}

/// Scalar summary of a solved equilibrium problem.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MbEquilibriumData {
    pub a: f64,
    pub b: f64,
    pub theta: f64,
    /// Leading coefficient of the boundary map.
    pub c0: f64,
    /// Subleading coefficient of the boundary map.
    pub c1: f64,
    /// Lagrange multiplier of the equilibrium problem.
    pub ell: f64,
}

/// Closed-form expansion constants of `log D_n`: the linear term `c1` and
/// the complex log/constant terms, plus the largest `|Re beta|` among the
/// singular factors.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MbConstants {
    pub c1: f64,
    pub c2_re: f64,
    pub c2_im: f64,
    pub c3_re: f64,
    pub c3_im: f64,
    pub h0_re: f64,
    pub h0_im: f64,
    pub beta_max: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: MbStatus, message: impl Display) -> MbStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).expect("NUL bytes stripped");
    });
    status
}

/// Run `f`, translating panics from the numerical core into a status code
/// instead of unwinding across the C boundary.
fn guard(f: impl FnOnce() -> MbStatus) -> MbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(MbStatus::MbErrNumerical, "internal panic"),
    }
}

/// Message describing the most recent failure on this thread, as a
/// NUL-terminated UTF-8 string.  Empty until a call fails.
///
/// The pointer stays valid until the next failing call on the same thread;
/// do not free it.
#[no_mangle]
pub extern "C" fn mb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string; do not free.
#[no_mangle]
pub extern "C" fn mb_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).expect("no NUL in version"))
        .as_ptr()
}

/// Parse a JSON ensemble description into a new handle.
///
/// The JSON object needs `a`, `b`, `theta`; `W` (smooth-part coefficients),
/// `alpha_left`, `alpha_right` and `singularities` are optional.  Complex
/// numbers are `[re, im]` pairs.  Parameters are checked against the wide
/// admissibility window (`-1/2 < Re beta <= 1/2`); the equilibrium-side
/// routines re-check the narrow one.
///
/// # Safety
/// `json` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer.  On success `*out` owns the handle and must be
/// released with [`mb_spec_free`].
#[no_mangle]
pub unsafe extern "C" fn mb_spec_parse_json(
    json: *const c_char,
    out: *mut *mut MbSpec,
) -> MbStatus {
    if json.is_null() || out.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    *out = std::ptr::null_mut();
    let text = match CStr::from_ptr(json).to_str() {
        Ok(text) => text,
        Err(e) => return fail(MbStatus::MbErrUtf8, e),
    };
    let spec: EnsembleSpec = match serde_json::from_str(text) {
        Ok(spec) => spec,
        Err(e) => return fail(MbStatus::MbErrValidation, e),
    };
    if let Err(e) = validate_spec(&spec, ValidationMode::Oracle) {
        return fail(MbStatus::MbErrValidation, e);
    }
    *out = Box::into_raw(Box::new(MbSpec { spec }));
    MbStatus::MbOk
}

/// Release a handle from [`mb_spec_parse_json`].  Null is ignored.
///
/// # Safety
/// `spec` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn mb_spec_free(spec: *mut MbSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Solve the equilibrium problem for the spec's interval and `theta`.
///
/// Fails with `MB_ERR_VALIDATION` when the spec sits outside the narrow
/// window required here (`|Re beta| < 1/4` for every singular factor).
///
/// # Safety
/// `spec` must be a live handle and `out` writable storage for one pointer.
/// On success `*out` owns the handle and must be released with
/// [`mb_equilibrium_free`].
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_solve(
    spec: *const MbSpec,
    out: *mut *mut MbEquilibrium,
) -> MbStatus {
    if spec.is_null() || out.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    *out = std::ptr::null_mut();
    let spec = &(*spec).spec;
    guard(|| {
        if let Err(e) = validate_spec(spec, ValidationMode::Equilibrium) {
            return fail(MbStatus::MbErrValidation, e);
        }
        match solve_coefficients(spec.a, spec.b, spec.theta, 1e-13) {
            Ok(data) => {
                *out = Box::into_raw(Box::new(MbEquilibrium { data }));
                MbStatus::MbOk
            }
            Err(e) => fail(MbStatus::MbErrNumerical, e),
        }
    })
}

/// Release a handle from [`mb_equilibrium_solve`].  Null is ignored.
///
/// # Safety
/// `eq` must be null or an unreleased handle from this library.
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_free(eq: *mut MbEquilibrium) {
    if !eq.is_null() {
        drop(Box::from_raw(eq));
    }
}

unsafe fn eval_scalar(
    eq: *const MbEquilibrium,
    out: *mut f64,
    f: impl FnOnce(&EquilibriumData) -> Result<f64, mb_core::equilibrium::EquilibriumError>,
) -> MbStatus {
    if eq.is_null() || out.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    *out = 0.0;
    let data = &(*eq).data;
    guard(|| match f(data) {
        Ok(value) => {
            *out = value;
            MbStatus::MbOk
        }
        Err(e) => fail(MbStatus::MbErrNumerical, e),
    })
}

/// Equilibrium density at `x`; zero outside the open interval, an error on
/// non-finite `x`.
///
/// # Safety
/// `eq` must be a live handle and `out` writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_density(
    eq: *const MbEquilibrium,
    x: f64,
    out: *mut f64,
) -> MbStatus {
    eval_scalar(eq, out, |data| data.density(x))
}

/// Mass of `[a, t]` under the equilibrium measure, clamped to `[0, 1]`
/// outside the support.
///
/// # Safety
/// `eq` must be a live handle and `out` writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_cdf(
    eq: *const MbEquilibrium,
    t: f64,
    out: *mut f64,
) -> MbStatus {
    eval_scalar(eq, out, |data| data.cdf(t))
}

/// Logarithmic-potential pair `int log|t - x| + (1/theta) log|t^theta -
/// x^theta| dmu(x)` at `t > 0`.
///
/// # Safety
/// `eq` must be a live handle and `out` writable storage for one double.
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_log_potential(
    eq: *const MbEquilibrium,
    t: f64,
    out: *mut f64,
) -> MbStatus {
    eval_scalar(eq, out, |data| data.log_potential(t))
}

/// Copy the scalar summary of a solved equilibrium problem into `out`.
///
/// # Safety
/// `eq` must be a live handle and `out` writable storage for one
/// [`MbEquilibriumData`].
#[no_mangle]
pub unsafe extern "C" fn mb_equilibrium_data(
    eq: *const MbEquilibrium,
    out: *mut MbEquilibriumData,
) -> MbStatus {
    if eq.is_null() || out.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    let data = &(*eq).data;
    *out = MbEquilibriumData {
        a: data.a,
        b: data.b,
        theta: data.theta,
        c0: data.c0,
        c1: data.c1,
        ell: data.ell,
    };
    MbStatus::MbOk
}

/// Closed-form expansion constants of `log D_n` for `spec`, using the
/// already-solved equilibrium data in `eq`.
///
/// Fails with `MB_ERR_VALIDATION` when `eq` was solved for a different
/// interval or `theta` than `spec` describes.
///
/// # Safety
/// `spec` and `eq` must be live handles and `out` writable storage for one
/// [`MbConstants`].
#[no_mangle]
pub unsafe extern "C" fn mb_constants(
    spec: *const MbSpec,
    eq: *const MbEquilibrium,
    out: *mut MbConstants,
) -> MbStatus {
    if spec.is_null() || eq.is_null() || out.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    *out = MbConstants::default();
    let spec = &(*spec).spec;
    let data = &(*eq).data;
    if spec.a != data.a || spec.b != data.b || spec.theta != data.theta {
        return fail(
            MbStatus::MbErrValidation,
            format!(
                "equilibrium handle is for [{}, {}] with theta {}, spec wants [{}, {}] with theta {}",
                data.a, data.b, data.theta, spec.a, spec.b, spec.theta
            ),
        );
    }
    guard(|| {
        let validated = match validate_spec(spec, ValidationMode::Equilibrium) {
            Ok(v) => v,
            Err(e) => return fail(MbStatus::MbErrValidation, e),
        };
        match constants(&validated, data) {
            Ok(c) => {
                *out = MbConstants {
                    c1: c.c1,
                    c2_re: c.c2.re,
                    c2_im: c.c2.im,
                    c3_re: c.c3.re,
                    c3_im: c.c3.im,
                    h0_re: c.h0.re,
                    h0_im: c.h0.im,
                    beta_max: c.beta_max,
                };
                MbStatus::MbOk
            }
            Err(e) => fail(MbStatus::MbErrNumerical, e),
        }
    })
}

/// Exact log-determinant `log D_n` in extended precision: absolute value
/// into `out_log_abs`, phase in `(-pi, pi]` into `out_phase`.
///
/// `precision_bits` of zero uses the default working precision (256 bits,
/// grown with `n`); otherwise it must lie in `[64, 1048576]`.
///
/// # Safety
/// `spec` must be a live handle; `out_log_abs` and `out_phase` must be
/// writable storage for one double each.
#[no_mangle]
pub unsafe extern "C" fn mb_log_det(
    spec: *const MbSpec,
    n: usize,
    precision_bits: usize,
    out_log_abs: *mut f64,
    out_phase: *mut f64,
) -> MbStatus {
    if spec.is_null() || out_log_abs.is_null() || out_phase.is_null() {
        return fail(MbStatus::MbErrNullptr, "null pointer argument");
    }
    *out_log_abs = 0.0;
    *out_phase = 0.0;
    if n == 0 {
        return fail(MbStatus::MbErrValidation, "determinant size must be at least 1");
    }
    let mut policy = PrecisionPolicy::default();
    if precision_bits != 0 {
        if !(64..=1 << 20).contains(&precision_bits) {
            return fail(
                MbStatus::MbErrValidation,
                format!("precision_bits {precision_bits} outside [64, 1048576]"),
            );
        }
        policy.base_bits = precision_bits;
    }
    let spec = &(*spec).spec;
    guard(|| {
        let validated = match validate_spec(spec, ValidationMode::Oracle) {
            Ok(v) => v,
            Err(e) => return fail(MbStatus::MbErrValidation, e),
        };
        match log_det(n, &validated, &policy) {
            Ok(record) => {
                *out_log_abs = record.log_abs;
                *out_phase = record.phase;
                MbStatus::MbOk
            }
            Err(e) => fail(MbStatus::MbErrNumerical, e),
        }
    })
}
