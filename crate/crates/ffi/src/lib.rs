//! C ABI over the series-regression library.
//!
//! Handles are opaque; every fallible call returns an `SbStatus` and leaves a
//! human-readable message for `sb_last_error` on failure. Out-parameters are
//! only written on success. All functions are safe to call from any
//! thread; the error message is thread-local.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use seriesband::basis::BasisSpec;
use seriesband::candidate::{select_cv_with_fits, simulation_rule_set, CandidateSet};
use seriesband::fit::{basis_row_at, cross_k_correlation, predict, standard_error_at, Dataset, FitResult};
use seriesband::rng::derive;
use seriesband::suptstat::{
    make_band, nested_critical_value, pointwise_critical_value, robust_ci, standard_z,
    uniform_band_critical_value,
};
use seriesband::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    SbStatusOk = 0,
    /// A required pointer argument was null.
    SbStatusNullArgument = 1,
    /// Invalid input or configuration.
    SbStatusInvalidInput = 2,
    /// Numerical failure inside the estimation.
    SbStatusNumericalFailure = 3,
    /// A panic was caught at the boundary; state may be inconsistent.
    SbStatusPanic = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SbStatus {
    set_error(e.to_string());
    match e.exit_code() {
        2 => SbStatus::SbStatusInvalidInput,
        _ => SbStatus::SbStatusNumericalFailure,
    }
}

fn guarded(f: impl FnOnce() -> SbStatus) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic crossed the C boundary".into());
            SbStatus::SbStatusPanic
        }
    }
}

/// Owned regression sample.
pub struct SbDataset {
    inner: Dataset,
}

/// Cross-validated fit over the default candidate set, ready to answer
/// pointwise and uniform interval queries.
pub struct SbAnalysis {
    data: Dataset,
    set: CandidateSet,
    fits: Vec<FitResult>,
    k_cv: usize,
    k_cv_index: usize,
    alpha: f64,
    draws: u64,
    seed: u64,
}

/// Pointwise answer: estimate, standard error, critical values, and both
/// interval kinds at one evaluation point.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SbCiResult {
    pub g_hat: f64,
    pub se: f64,
    /// Search-robust critical value at this point.
    pub c_hat: f64,
    /// Monte Carlo standard error of c_hat.
    pub mc_se: f64,
    pub standard_lower: f64,
    pub standard_upper: f64,
    pub robust_lower: f64,
    pub robust_upper: f64,
    /// Cross-validated candidate size the intervals are centered on.
    pub k_cv: usize,
}

/// Copies the most recent error message for this thread into `buf`
/// (truncated, always NUL-terminated when `cap > 0`) and returns the full
/// message length in bytes, excluding the NUL.
#[no_mangle]
pub unsafe extern "C" fn sb_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a dataset from parallel arrays of length `n`. The arrays are
/// copied; the caller keeps ownership of its buffers.
#[no_mangle]
pub unsafe extern "C" fn sb_dataset_new(
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut SbDataset,
) -> SbStatus {
    guarded(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            set_error("null argument to sb_dataset_new".into());
            return SbStatus::SbStatusNullArgument;
        }
        let xs = std::slice::from_raw_parts(x, n).to_vec();
        let ys = std::slice::from_raw_parts(y, n).to_vec();
        match Dataset::new(xs, ys) {
            Ok(d) => {
                *out = Box::into_raw(Box::new(SbDataset { inner: d }));
                SbStatus::SbStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Frees a dataset handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sb_dataset_free(dataset: *mut SbDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Cross-validates quadratic-spline fits over the default candidate range
/// for the sample size and prepares interval queries at level `1 - alpha`
/// with `draws` critical-value simulations. The dataset is copied and may
/// be freed immediately afterwards.
#[no_mangle]
pub unsafe extern "C" fn sb_analysis_new(
    dataset: *const SbDataset,
    alpha: f64,
    draws: u64,
    seed: u64,
    out: *mut *mut SbAnalysis,
) -> SbStatus {
    guarded(|| {
        if dataset.is_null() || out.is_null() {
            set_error("null argument to sb_analysis_new".into());
            return SbStatus::SbStatusNullArgument;
        }
        let data = (*dataset).inner.clone();
        let built = (|| {
            let set = simulation_rule_set(data.n())?;
            let (lo, hi) = data
                .x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
                    (l.min(v), h.max(v))
                });
            let (selection, mut by_k) = select_cv_with_fits(&data, &set, |k| {
                BasisSpec::quadratic_spline(k.saturating_sub(1), (lo, hi))
            })?;
            let fits: Vec<FitResult> = set
                .k_values
                .iter()
                .map(|k| by_k.remove(k).expect("fit for every candidate"))
                .collect();
            let k_cv_index = set
                .k_values
                .iter()
                .position(|&k| k == selection.k_cv)
                .expect("selected candidate is in the set");
            Ok::<_, Error>(SbAnalysis {
                data,
                set,
                fits,
                k_cv: selection.k_cv,
                k_cv_index,
                alpha,
                draws,
                seed,
            })
        })();
        match built {
            Ok(a) => {
                *out = Box::into_raw(Box::new(a));
                SbStatus::SbStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Frees an analysis handle. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn sb_analysis_free(analysis: *mut SbAnalysis) {
    if !analysis.is_null() {
        drop(Box::from_raw(analysis));
    }
}

/// Pointwise intervals at `x`. The robust interval replaces the normal
/// quantile with a critical value simulated from the estimated
/// cross-candidate correlation, so it stays valid when the reported fit was
/// chosen by searching over the candidate set. Deterministic in
/// (analysis seed, x).
#[no_mangle]
pub unsafe extern "C" fn sb_ci_at(
    analysis: *const SbAnalysis,
    x: f64,
    out: *mut SbCiResult,
) -> SbStatus {
    guarded(|| {
        if analysis.is_null() || out.is_null() {
            set_error("null argument to sb_ci_at".into());
            return SbStatus::SbStatusNullArgument;
        }
        let a = &*analysis;
        let computed = (|| {
            let refs: Vec<&FitResult> = a.fits.iter().collect();
            let rows = refs
                .iter()
                .map(|f| basis_row_at(f, x))
                .collect::<Result<Vec<_>, _>>()?;
            let sigma = cross_k_correlation(&refs, &rows, format!("x={x}"))?;
            let cv = pointwise_critical_value(
                &sigma,
                a.alpha,
                a.draws,
                derive(a.seed, &[x.to_bits()]),
            )?;
            let fit = &a.fits[a.k_cv_index];
            let g_hat = predict(fit, &[x])?[0];
            let se = standard_error_at(fit, x)?;
            let standard = robust_ci(g_hat, se, standard_z(a.alpha))?;
            let robust = robust_ci(g_hat, se, cv.c_hat)?;
            Ok::<_, Error>(SbCiResult {
                g_hat,
                se,
                c_hat: cv.c_hat,
                mc_se: cv.mc_se,
                standard_lower: standard.lower,
                standard_upper: standard.upper,
                robust_lower: robust.lower,
                robust_upper: robust.upper,
                k_cv: a.k_cv,
            })
        })();
        match computed {
            Ok(r) => {
                *out = r;
                SbStatus::SbStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Uniform confidence band on `grid_size` evenly spaced points of
/// [lo, hi], using a weighted bootstrap over the whole candidate set with
/// `bootstrap_draws` replications. Writes into four caller-owned arrays of
/// length `grid_size`; any of them may be null to skip that output.
#[no_mangle]
pub unsafe extern "C" fn sb_band(
    analysis: *const SbAnalysis,
    lo: f64,
    hi: f64,
    grid_size: usize,
    bootstrap_draws: u64,
    x_out: *mut f64,
    center_out: *mut f64,
    lower_out: *mut f64,
    upper_out: *mut f64,
) -> SbStatus {
    guarded(|| {
        if analysis.is_null() {
            set_error("null argument to sb_band".into());
            return SbStatus::SbStatusNullArgument;
        }
        let a = &*analysis;
        if grid_size < 2 {
            return status_of(&Error::InvalidConfig(
                "band grid needs at least 2 points".into(),
            ));
        }
        if !(lo < hi) {
            return status_of(&Error::DegenerateSupport { a: lo, b: hi });
        }
        let grid: Vec<f64> = (0..grid_size)
            .map(|i| lo + (hi - lo) * i as f64 / (grid_size - 1) as f64)
            .collect();
        let computed = (|| {
            let refs: Vec<&FitResult> = a.fits.iter().collect();
            let cv = uniform_band_critical_value(
                &a.data,
                &refs,
                &grid,
                a.alpha,
                bootstrap_draws,
                derive(a.seed, &[u64::from(b'b')]),
            )?;
            make_band(&a.fits[a.k_cv_index], &grid, cv.c_hat)
        })();
        match computed {
            Ok(band) => {
                let lower = band.lower();
                let upper = band.upper();
                for i in 0..grid_size {
                    if !x_out.is_null() {
                        *x_out.add(i) = band.grid[i];
                    }
                    if !center_out.is_null() {
                        *center_out.add(i) = band.center[i];
                    }
                    if !lower_out.is_null() {
                        *lower_out.add(i) = lower[i];
                    }
                    if !upper_out.is_null() {
                        *upper_out.add(i) = upper[i];
                    }
                }
                SbStatus::SbStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Number of candidate sizes the analysis searched over.
#[no_mangle]
pub unsafe extern "C" fn sb_analysis_candidate_count(analysis: *const SbAnalysis) -> usize {
    if analysis.is_null() {
        return 0;
    }
    (*analysis).set.p
}

/// Critical value for reporting any of `p` nested homoskedastic fits whose
/// standard errors are given. Writes c_hat and its Monte Carlo standard
/// error (either output may be null).
#[no_mangle]
pub unsafe extern "C" fn sb_critical_value_from_ses(
    ses: *const f64,
    p: usize,
    alpha: f64,
    draws: u64,
    seed: u64,
    c_out: *mut f64,
    mc_se_out: *mut f64,
) -> SbStatus {
    guarded(|| {
        if ses.is_null() {
            set_error("null argument to sb_critical_value_from_ses".into());
            return SbStatus::SbStatusNullArgument;
        }
        let ses = std::slice::from_raw_parts(ses, p);
        match nested_critical_value(ses, alpha, draws, seed) {
            Ok(cv) => {
                if !c_out.is_null() {
                    *c_out = cv.c_hat;
                }
                if !mc_se_out.is_null() {
                    *mc_se_out = cv.mc_se;
                }
                SbStatus::SbStatusOk
            }
            Err(e) => status_of(&e),
        }
    })
}
