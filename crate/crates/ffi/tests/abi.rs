use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use stochinv_ffi::*;

const CIR: &str = r#"{
    "spec_version": 1,
    "dimension": 1,
    "drift": [[{"coef": 0.3, "exp": [0]}, {"coef": -1.0, "exp": [1]}]],
    "covariance": [[[{"coef": 1.0, "exp": [1]}]]],
    "domain": {"canonical": [[[0.0, null]]]}
}"#;

fn load(json: &str) -> (SiStatus, *mut SiModel) {
    let text = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { si_model_from_json(text.as_ptr(), &mut m) };
    (status, m)
}

fn last_error() -> String {
    let p = si_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn cir_round_trip() {
    let (status, m) = load(CIR);
    assert_eq!(status, SiStatus::Ok);
    assert!(si_last_error_message().is_null());
    unsafe {
        assert_eq!(si_model_dim(m), 1);
        let mut corr = [f64::NAN];
        assert_eq!(
            si_drift_correction(m, [0.0].as_ptr(), 1, corr.as_mut_ptr()),
            SiStatus::Ok
        );
        assert_eq!(corr[0], 0.0);
        assert_eq!(
            si_drift_correction(m, [2.0].as_ptr(), 1, corr.as_mut_ptr()),
            SiStatus::Ok
        );
        assert!((corr[0] - 0.5).abs() < 1e-9);

        let mut v = SiPointVerdict::default();
        assert_eq!(
            si_check_point(m, [0.0].as_ptr(), [-1.0].as_ptr(), 1, &mut v),
            SiStatus::Ok
        );
        assert!(v.pass);
        assert!((v.corrected_drift_margin + 0.3).abs() < 1e-12);

        let mut json = ptr::null_mut();
        let mut pass = false;
        assert_eq!(
            si_check_domain(m, 11, -1.0, 1.0, &mut pass, &mut json),
            SiStatus::Ok
        );
        assert!(pass);
        let report: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(report["overall_pass"], true);
        si_string_free(json);
        si_model_free(m);
    }
}

#[test]
fn error_statuses() {
    let (status, m) = load("{");
    assert_eq!(status, SiStatus::InvalidSpec);
    assert!(m.is_null());
    assert!(!last_error().is_empty());

    let asym = r#"{"spec_version": 1, "dimension": 2, "drift": [[], []],
        "covariance": [[[], [{"coef": 1.0, "exp": [1, 0]}]], [[{"coef": 2.0, "exp": [1, 0]}], []]],
        "domain": {"canonical": [[[null, null]], [[0, null]]]}}"#;
    let (status, _) = load(asym);
    assert_eq!(status, SiStatus::InvalidSpec);
    assert!(last_error().contains("#/covariance/1/0"));

    let bad_utf8 = [0xffu8, 0xfe, 0];
    let mut m = ptr::null_mut();
    let status = unsafe { si_model_from_json(bad_utf8.as_ptr().cast(), &mut m) };
    assert_eq!(status, SiStatus::InvalidUtf8);
    assert_eq!(
        unsafe { si_model_from_json(ptr::null(), &mut m) },
        SiStatus::NullPointer
    );

    let (_, m) = load(CIR);
    unsafe {
        let mut out = [0.0; 2];
        assert_eq!(
            si_drift_correction(m, [0.0, 1.0].as_ptr(), 2, out.as_mut_ptr()),
            SiStatus::Dimension
        );
        assert_eq!(
            si_drift_correction(ptr::null(), [0.0].as_ptr(), 1, out.as_mut_ptr()),
            SiStatus::NullPointer
        );
        let mut v = SiPointVerdict::default();
        assert_eq!(
            si_check_point(m, [0.0].as_ptr(), [0.0].as_ptr(), 1, &mut v),
            SiStatus::Evaluation
        );
        assert_eq!(si_model_dim(ptr::null()), 0);
        si_model_free(m);
        si_model_free(ptr::null_mut());
        si_string_free(ptr::null_mut());
    }
}

#[test]
fn pinv_is_column_major() {
    // rank one: [1 2; 2 4] / 25
    let a = [1.0, 2.0, 2.0, 4.0];
    let mut p = [0.0; 4];
    assert_eq!(
        unsafe { si_sym_pinv(a.as_ptr(), 2, 1e-8, p.as_mut_ptr()) },
        SiStatus::Ok
    );
    for (got, want) in p.iter().zip(a.iter().map(|x| x / 25.0)) {
        assert!((got - want).abs() < 1e-14);
    }
    let asym = [1.0, 0.0, 1.0, 1.0];
    assert_eq!(
        unsafe { si_sym_pinv(asym.as_ptr(), 2, 1e-8, p.as_mut_ptr()) },
        SiStatus::Evaluation
    );
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(si_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/stochinv.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for name in [
        "si_model_from_json",
        "si_model_free",
        "si_model_dim",
        "si_drift_correction",
        "si_check_point",
        "si_check_domain",
        "si_sym_pinv",
        "si_string_free",
        "si_last_error_message",
        "si_version",
        "SI_STATUS_OK",
        "typedef struct SiModel SiModel",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // syntax check when a C compiler is around
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
