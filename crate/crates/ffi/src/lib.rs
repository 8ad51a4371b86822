//! C interface to `medfx`.
//!
//! Tables and reports are opaque handles owned by the caller and released
//! with the matching `_free` function. Every fallible call returns a
//! [`MedfxStatus`]; on failure [`medfx_last_error`] describes what went
//! wrong on the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use medfx::data::{validate_dataset, ObservationTable, OutcomeBounds, RawDataset, SupportSpec};
use medfx::eif::EFFECT_NAMES;
use medfx::estimators::{onestep, tmle, EstimateOptions, EstimatorOutput};
use medfx::nuisance::{fit_nuisances, NuisanceConfig};
use medfx::simulation::{true_effects, DgpConfig};

/// Number of effects in a report: total, direct, indirect through the
/// first mediator, indirect through the second, covariant.
pub const MEDFX_EFFECT_COUNT: usize = 5;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedfxStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Estimation = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedfxMethod {
    OneStep = 0,
    Tmle = 1,
}

/// A validated data set.
pub struct MedfxTable(ObservationTable);

/// Effect estimates on the original outcome scale.
pub struct MedfxReport(EstimatorOutput);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<(), (MedfxStatus, String)>) -> MedfxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MedfxStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MedfxStatus::Panic
        }
    }
}

fn null(what: &str) -> (MedfxStatus, String) {
    (MedfxStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: medfx::Error) -> (MedfxStatus, String) {
    (MedfxStatus::InvalidArgument, e.to_string())
}

/// Builds a table from column arrays of length `n`.
///
/// `covariates` is row-major `n × n_covariates`, `mediators` row-major
/// `n × n_mediators` with integer levels. `treatment` holds 0 (control) or
/// 1 (treated). Pass `outcome_min < outcome_max` to declare outcome bounds,
/// or equal values to use the observed range.
///
/// # Safety
/// Each pointer must reference the stated number of readable elements, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn medfx_table_from_arrays(
    n: usize,
    n_covariates: usize,
    covariates: *const f64,
    treatment: *const u8,
    n_mediators: usize,
    mediators: *const i32,
    outcome: *const f64,
    outcome_min: f64,
    outcome_max: f64,
    out: *mut *mut MedfxTable,
) -> MedfxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if treatment.is_null() || mediators.is_null() || outcome.is_null() {
            return Err(null("treatment, mediators or outcome"));
        }
        if n_covariates > 0 && covariates.is_null() {
            return Err(null("covariates"));
        }
        if n == 0 || n_mediators == 0 {
            return Err((
                MedfxStatus::InvalidArgument,
                "need at least one row and one mediator".into(),
            ));
        }
        let cov = if n_covariates > 0 {
            std::slice::from_raw_parts(covariates, n * n_covariates)
        } else {
            &[]
        };
        let med = std::slice::from_raw_parts(mediators, n * n_mediators);
        let raw = RawDataset {
            covariate_names: (1..=n_covariates).map(|j| format!("c{j}")).collect(),
            covariates: (0..n_covariates)
                .map(|j| (0..n).map(|i| cov[i * n_covariates + j]).collect())
                .collect(),
            treatment: std::slice::from_raw_parts(treatment, n)
                .iter()
                .map(|&a| f64::from(a))
                .collect(),
            mediator_names: (1..=n_mediators).map(|j| format!("m{j}")).collect(),
            mediators: (0..n_mediators)
                .map(|j| {
                    (0..n)
                        .map(|i| f64::from(med[i * n_mediators + j]))
                        .collect()
                })
                .collect(),
            outcome: std::slice::from_raw_parts(outcome, n).to_vec(),
        };
        let bounds = if outcome_min == outcome_max {
            OutcomeBounds::Observed
        } else {
            OutcomeBounds::Declared(outcome_min, outcome_max)
        };
        let table = validate_dataset(&raw, &SupportSpec::Infer, bounds).map_err(invalid)?;
        *out = Box::into_raw(Box::new(MedfxTable(table)));
        Ok(())
    })
}

/// Rows in the table, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn medfx_table_rows(table: *const MedfxTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn medfx_table_free(table: *mut MedfxTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Fits the default nuisance learners and runs one estimator at level
/// `alpha`. Needs exactly two mediators.
///
/// # Safety
/// `table` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn medfx_estimate(
    table: *const MedfxTable,
    method: MedfxMethod,
    alpha: f64,
    out: *mut *mut MedfxReport,
) -> MedfxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let table = &table.as_ref().ok_or_else(|| null("table"))?.0;
        let opts = EstimateOptions {
            alpha,
            ..Default::default()
        };
        let est = |e: medfx::Error| (MedfxStatus::Estimation, e.to_string());
        let nuis = fit_nuisances(table, &NuisanceConfig::default()).map_err(est)?;
        let res = match method {
            MedfxMethod::OneStep => onestep(&nuis, table, &opts),
            MedfxMethod::Tmle => tmle(&nuis, table, &opts),
        };
        *out = Box::into_raw(Box::new(MedfxReport(res.map_err(est)?)));
        Ok(())
    })
}

unsafe fn report_value(
    report: *const MedfxReport,
    effect: usize,
    dest: *mut f64,
    pick: impl FnOnce(&EstimatorOutput, usize) -> f64,
) -> MedfxStatus {
    guard(|| {
        let r = &report.as_ref().ok_or_else(|| null("report"))?.0;
        if dest.is_null() {
            return Err(null("value"));
        }
        if effect >= MEDFX_EFFECT_COUNT {
            return Err((
                MedfxStatus::InvalidArgument,
                format!("effect index {effect} out of range"),
            ));
        }
        *dest = pick(r, effect);
        Ok(())
    })
}

/// Point estimate of effect `effect` (see [`medfx_effect_name`]).
///
/// # Safety
/// `report` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn medfx_report_estimate(
    report: *const MedfxReport,
    effect: usize,
    value: *mut f64,
) -> MedfxStatus {
    report_value(report, effect, value, |r, k| r.report.estimates[k])
}

/// # Safety
/// `report` must be a live handle and `value` writable.
#[no_mangle]
pub unsafe extern "C" fn medfx_report_se(
    report: *const MedfxReport,
    effect: usize,
    value: *mut f64,
) -> MedfxStatus {
    report_value(report, effect, value, |r, k| r.report.se[k])
}

/// # Safety
/// `report` must be a live handle and `lower`, `upper` writable.
#[no_mangle]
pub unsafe extern "C" fn medfx_report_ci(
    report: *const MedfxReport,
    effect: usize,
    lower: *mut f64,
    upper: *mut f64,
) -> MedfxStatus {
    if upper.is_null() {
        return guard(|| Err(null("upper")));
    }
    let status = report_value(report, effect, lower, |r, k| r.report.ci[k].0);
    if status == MedfxStatus::Ok {
        *upper = (*report).0.report.ci[effect].1;
    }
    status
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn medfx_report_free(report: *mut MedfxReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Writes the five true effects of the built-in simulation design to
/// `values`.
///
/// # Safety
/// `values` must have room for five doubles.
#[no_mangle]
pub unsafe extern "C" fn medfx_true_effects(values: *mut f64) -> MedfxStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let t = true_effects(&DgpConfig::new(1, 1))
            .map_err(|e| (MedfxStatus::Estimation, e.to_string()))?;
        std::slice::from_raw_parts_mut(values, MEDFX_EFFECT_COUNT).copy_from_slice(&t.effects);
        Ok(())
    })
}

/// Static name of effect `effect`, or null when out of range.
#[no_mangle]
pub extern "C" fn medfx_effect_name(effect: usize) -> *const c_char {
    static NAMES: [&CStr; MEDFX_EFFECT_COUNT] = [
        c"total",
        c"direct",
        c"indirect_m1",
        c"indirect_m2",
        c"covariant",
    ];
    debug_assert!(NAMES
        .iter()
        .zip(EFFECT_NAMES)
        .all(|(a, b)| a.to_bytes() == b.as_bytes()));
    NAMES.get(effect).map_or(ptr::null(), |s| s.as_ptr())
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn medfx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn medfx_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(s) => s,
            Err(_) => c"unknown",
        };
    VERSION.as_ptr()
}
