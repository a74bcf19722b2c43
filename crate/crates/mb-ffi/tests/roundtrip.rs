//! Exercises the C surface from Rust: handle lifecycles, status codes, the
//! thread-local error message, and golden values on the unit weight.

use mb_ffi::*;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::ptr;

fn last_error() -> String {
    unsafe {
        CStr::from_ptr(mb_last_error_message())
            .to_string_lossy()
            .into_owned()
    }
}

unsafe fn parse(json: &str) -> (MbStatus, *mut MbSpec) {
    let json = CString::new(json).unwrap();
    let mut spec = ptr::null_mut();
    let status = mb_spec_parse_json(json.as_ptr(), &mut spec);
    (status, spec)
}

unsafe fn parse_ok(json: &str) -> *mut MbSpec {
    let (status, spec) = parse(json);
    assert_eq!(status, MbStatus::MbOk, "{}", last_error());
    assert!(!spec.is_null());
    spec
}

#[test]
fn version_is_a_static_semver_string() {
    let v = unsafe { CStr::from_ptr(mb_version()) }.to_str().unwrap();
    assert!(v.split('.').count() >= 2, "version {v:?}");
    // stable across calls
    assert_eq!(unsafe { mb_version() }, unsafe { mb_version() });
}

#[test]
fn parse_rejects_bad_input_with_the_right_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            mb_spec_parse_json(ptr::null(), &mut out),
            MbStatus::MbErrNullptr
        );
        let json = CString::new("{}").unwrap();
        assert_eq!(
            mb_spec_parse_json(json.as_ptr(), ptr::null_mut()),
            MbStatus::MbErrNullptr
        );

        let bad_utf8: [c_char; 3] = [0x7b, -1i8 as c_char, 0];
        assert_eq!(
            mb_spec_parse_json(bad_utf8.as_ptr(), &mut out),
            MbStatus::MbErrUtf8
        );
        assert!(out.is_null());

        let (status, spec) = parse("{\"a\": 1.0");
        assert_eq!(status, MbStatus::MbErrValidation);
        assert!(spec.is_null());
        assert!(!last_error().is_empty());

        // parses as JSON but fails the parameter checks
        let (status, spec) = parse(r#"{"a": -1.0, "b": 4.0, "theta": 1.0}"#);
        assert_eq!(status, MbStatus::MbErrValidation);
        assert!(spec.is_null());
        assert!(last_error().contains("interval"), "{}", last_error());

        // wide window allows Re beta = 0.3; the solve below rejects it
        let spec = parse_ok(
            r#"{"a": 1.0, "b": 4.0, "theta": 1.0,
                "singularities": [{"t": 2.5, "beta": [0.3, 0.0]}]}"#,
        );
        let mut eq = ptr::null_mut();
        assert_eq!(mb_equilibrium_solve(spec, &mut eq), MbStatus::MbErrValidation);
        assert!(eq.is_null());
        mb_spec_free(spec);
        mb_spec_free(ptr::null_mut());
    }
}

#[test]
fn equilibrium_handles_report_golden_values() {
    unsafe {
        let spec = parse_ok(r#"{"a": 1.0, "b": 4.0, "theta": 1.0}"#);
        let mut eq = ptr::null_mut();
        assert_eq!(mb_equilibrium_solve(spec, &mut eq), MbStatus::MbOk);

        let mut rho = 0.0;
        assert_eq!(mb_equilibrium_density(eq, 2.5, &mut rho), MbStatus::MbOk);
        assert!((rho - 2.0 / (3.0 * std::f64::consts::PI)).abs() < 1e-10);

        let mut cdf = 0.0;
        assert_eq!(mb_equilibrium_cdf(eq, 2.5, &mut cdf), MbStatus::MbOk);
        assert!((cdf - 0.5).abs() < 1e-10);

        let mut pot = 0.0;
        assert_eq!(mb_equilibrium_log_potential(eq, 2.5, &mut pot), MbStatus::MbOk);
        assert!(pot.is_finite());

        let mut summary = MbEquilibriumData::default();
        assert_eq!(mb_equilibrium_data(eq, &mut summary), MbStatus::MbOk);
        assert_eq!(summary.a, 1.0);
        assert_eq!(summary.b, 4.0);
        assert!((summary.c0 - 2.25).abs() < 1e-12);
        assert!((summary.c1 - 0.25).abs() < 1e-12);
        assert!((summary.ell + 2.0 * 0.75f64.ln()).abs() < 1e-12);

        // outside the support the density vanishes; NaN is a hard error
        assert_eq!(mb_equilibrium_density(eq, 0.5, &mut rho), MbStatus::MbOk);
        assert_eq!(rho, 0.0);
        assert_eq!(
            mb_equilibrium_density(eq, f64::NAN, &mut rho),
            MbStatus::MbErrNumerical
        );
        assert_eq!(rho, 0.0);
        assert_eq!(
            mb_equilibrium_density(ptr::null(), 2.5, &mut rho),
            MbStatus::MbErrNullptr
        );

        let mut consts = MbConstants::default();
        assert_eq!(mb_constants(spec, eq, &mut consts), MbStatus::MbOk);
        assert!((consts.c1 - 0.75f64.ln()).abs() < 1e-12);
        assert!((consts.c2_re - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((consts.c3_re + 0.25).abs() < 1e-12);
        assert_eq!(consts.h0_re, 1.0);
        assert_eq!(consts.beta_max, 0.0);

        // a handle solved for a different interval is rejected up front
        let other = parse_ok(r#"{"a": 1.0, "b": 2.0, "theta": 1.0}"#);
        assert_eq!(
            mb_constants(other, eq, &mut consts),
            MbStatus::MbErrValidation
        );
        assert!(last_error().contains("theta"), "{}", last_error());

        mb_spec_free(other);
        mb_equilibrium_free(eq);
        mb_equilibrium_free(ptr::null_mut());
        mb_spec_free(spec);
    }
}

#[test]
fn log_det_matches_hand_computed_determinants() {
    unsafe {
        let spec = parse_ok(r#"{"a": 1.0, "b": 2.0, "theta": 1.0}"#);
        let (mut log_abs, mut phase) = (0.0, 0.0);
        assert_eq!(
            mb_log_det(spec, 2, 0, &mut log_abs, &mut phase),
            MbStatus::MbOk
        );
        // det [[1, 3/2], [3/2, 7/3]] = 1/12
        assert!((log_abs - (1.0 / 12.0f64).ln()).abs() < 1e-13, "{log_abs}");
        assert_eq!(phase, 0.0);

        // explicit precision override and its validity window
        assert_eq!(
            mb_log_det(spec, 2, 128, &mut log_abs, &mut phase),
            MbStatus::MbOk
        );
        assert!((log_abs - (1.0 / 12.0f64).ln()).abs() < 1e-13);
        assert_eq!(
            mb_log_det(spec, 2, 32, &mut log_abs, &mut phase),
            MbStatus::MbErrValidation
        );
        assert_eq!(
            mb_log_det(spec, 0, 0, &mut log_abs, &mut phase),
            MbStatus::MbErrValidation
        );
        assert_eq!(
            mb_log_det(spec, 1, 0, ptr::null_mut(), &mut phase),
            MbStatus::MbErrNullptr
        );
        mb_spec_free(spec);
    }
}

#[test]
fn committed_header_declares_the_full_surface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mb.h");
    let text = std::fs::read_to_string(header).expect("header is committed");
    for symbol in [
        "MB_OK",
        "MB_ERR_VALIDATION",
        "MB_ERR_NUMERICAL",
        "MB_ERR_NULLPTR",
        "MB_ERR_UTF8",
        "mb_version",
        "mb_last_error_message",
        "mb_spec_parse_json",
        "mb_spec_free",
        "mb_equilibrium_solve",
        "mb_equilibrium_free",
        "mb_equilibrium_density",
        "mb_equilibrium_cdf",
        "mb_equilibrium_log_potential",
        "mb_equilibrium_data",
        "mb_constants",
        "mb_log_det",
    ] {
        assert!(text.contains(symbol), "header misses {symbol}");
    }
}
