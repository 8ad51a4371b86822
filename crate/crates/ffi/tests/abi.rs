use std::ffi::CStr;
use std::ptr;

use medfx::estimators::{onestep, EstimateOptions};
use medfx::nuisance::{fit_nuisances, NuisanceConfig};
use medfx::simulation::{draw_dgp, DgpConfig};
use medfx_ffi::*;

struct Columns {
    n: usize,
    cov: Vec<f64>,
    a: Vec<u8>,
    m: Vec<i32>,
    y: Vec<f64>,
}

fn columns(n: usize, seed: u64) -> Columns {
    let t = draw_dgp(&DgpConfig::new(n, seed)).unwrap();
    let mut c = Columns {
        n,
        cov: Vec::new(),
        a: Vec::new(),
        m: Vec::new(),
        y: Vec::new(),
    };
    for i in 0..n {
        c.cov.extend_from_slice(t.covariates(i));
        c.a.push(t.treatment(i));
        c.m.extend([t.mediator(i, 0) as i32, t.mediator(i, 1) as i32]);
        c.y.push(t.outcome(i));
    }
    c
}

unsafe fn table(c: &Columns) -> (MedfxStatus, *mut MedfxTable) {
    let mut out = ptr::null_mut();
    let s = medfx_table_from_arrays(
        c.n,
        2,
        c.cov.as_ptr(),
        c.a.as_ptr(),
        2,
        c.m.as_ptr(),
        c.y.as_ptr(),
        0.0,
        1.0,
        &mut out,
    );
    (s, out)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(medfx_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn estimates_match_the_library() {
    let c = columns(600, 12);
    unsafe {
        let (s, t) = table(&c);
        assert_eq!(s, MedfxStatus::Ok, "{}", last_error());
        assert_eq!(medfx_table_rows(t), 600);
        let mut r = ptr::null_mut();
        assert_eq!(
            medfx_estimate(t, MedfxMethod::OneStep, 0.05, &mut r),
            MedfxStatus::Ok
        );

        let lib_table = draw_dgp(&DgpConfig::new(600, 12)).unwrap();
        let nuis = fit_nuisances(&lib_table, &NuisanceConfig::default()).unwrap();
        let lib = onestep(&nuis, &lib_table, &EstimateOptions::default()).unwrap();
        for k in 0..MEDFX_EFFECT_COUNT {
            let (mut est, mut se, mut lo, mut hi) = (0.0, 0.0, 0.0, 0.0);
            assert_eq!(medfx_report_estimate(r, k, &mut est), MedfxStatus::Ok);
            assert_eq!(medfx_report_se(r, k, &mut se), MedfxStatus::Ok);
            assert_eq!(medfx_report_ci(r, k, &mut lo, &mut hi), MedfxStatus::Ok);
            assert!((est - lib.report.estimates[k]).abs() <= 1e-12);
            assert!((se - lib.report.se[k]).abs() <= 1e-12);
            assert!(lo < est && est < hi);
        }
        let mut x = 0.0;
        assert_eq!(
            medfx_report_estimate(r, 5, &mut x),
            MedfxStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        let mut r2 = ptr::null_mut();
        assert_eq!(
            medfx_estimate(t, MedfxMethod::Tmle, 0.05, &mut r2),
            MedfxStatus::Ok
        );
        medfx_report_free(r2);
        medfx_report_free(r);
        medfx_table_free(t);
    }
}

#[test]
fn bad_arguments_are_reported_not_fatal() {
    let mut c = columns(50, 3);
    unsafe {
        let mut out = ptr::null_mut();
        let s = medfx_table_from_arrays(
            c.n,
            2,
            c.cov.as_ptr(),
            ptr::null(),
            2,
            c.m.as_ptr(),
            c.y.as_ptr(),
            0.0,
            1.0,
            &mut out,
        );
        assert_eq!(s, MedfxStatus::NullPointer);
        assert!(out.is_null());

        c.a[7] = 2;
        let (s, t) = table(&c);
        assert_eq!(s, MedfxStatus::InvalidArgument);
        assert!(t.is_null());
        assert!(!last_error().is_empty());

        let mut r = ptr::null_mut();
        assert_eq!(
            medfx_estimate(ptr::null(), MedfxMethod::OneStep, 0.05, &mut r),
            MedfxStatus::NullPointer
        );
        medfx_table_free(ptr::null_mut());
        medfx_report_free(ptr::null_mut());
    }
}

#[test]
fn truth_names_and_version() {
    let mut v = [0.0; MEDFX_EFFECT_COUNT];
    assert_eq!(
        unsafe { medfx_true_effects(v.as_mut_ptr()) },
        MedfxStatus::Ok
    );
    assert!((v[1] - 0.148).abs() < 1e-3);
    let name = unsafe { CStr::from_ptr(medfx_effect_name(2)) };
    assert_eq!(name.to_str().unwrap(), "indirect_m1");
    assert!(medfx_effect_name(5).is_null());
    let ver = unsafe { CStr::from_ptr(medfx_version()) };
    assert_eq!(ver.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface() {
    let h =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/medfx.h")).unwrap();
    for sym in [
        "medfx_table_from_arrays",
        "medfx_estimate",
        "medfx_report_free",
        "medfx_last_error",
        "MEDFX_STATUS_PANIC",
    ] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}
