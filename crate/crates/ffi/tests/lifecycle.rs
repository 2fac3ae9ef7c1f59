//! Boundary tests: handle lifecycle, error codes, and agreement with the
//! underlying library.

use std::ffi::c_char;

use seriesband_ffi::*;

fn sample(n: usize) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let y: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (6.0 * v - 3.0).tanh() + 0.3 * (37.0 * i as f64).sin())
        .collect();
    (x, y)
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { sb_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(buf.len() - 1)].iter().map(|&c| c as u8).collect();
    String::from_utf8_lossy(&bytes).into_owned()
}

#[test]
fn full_lifecycle_matches_direct_library_use() {
    let (x, y) = sample(150);
    let mut dataset: *mut SbDataset = std::ptr::null_mut();
    let status = unsafe { sb_dataset_new(x.as_ptr(), y.as_ptr(), x.len(), &mut dataset) };
    assert_eq!(status, SbStatus::SbStatusOk);
    assert!(!dataset.is_null());

    let mut analysis: *mut SbAnalysis = std::ptr::null_mut();
    let status = unsafe { sb_analysis_new(dataset, 0.05, 2000, 7, &mut analysis) };
    assert_eq!(status, SbStatus::SbStatusOk);
    unsafe { sb_dataset_free(dataset) };

    let p = unsafe { sb_analysis_candidate_count(analysis) };
    assert!(p >= 2, "default candidate set has several sizes, got {p}");

    let mut r = SbCiResult {
        g_hat: 0.0,
        se: 0.0,
        c_hat: 0.0,
        mc_se: 0.0,
        standard_lower: 0.0,
        standard_upper: 0.0,
        robust_lower: 0.0,
        robust_upper: 0.0,
        k_cv: 0,
    };
    let status = unsafe { sb_ci_at(analysis, 0.5, &mut r) };
    assert_eq!(status, SbStatus::SbStatusOk);
    assert!(r.se > 0.0);
    assert!(r.c_hat >= 1.96);
    assert!(r.robust_lower <= r.standard_lower && r.standard_upper <= r.robust_upper);
    assert!(r.robust_lower <= r.g_hat && r.g_hat <= r.robust_upper);
    assert!(r.k_cv >= 6, "simulation-rule candidates for n=150 start at 6");

    // Same point twice: deterministic.
    let mut r2 = r;
    let status = unsafe { sb_ci_at(analysis, 0.5, &mut r2) };
    assert_eq!(status, SbStatus::SbStatusOk);
    assert_eq!(r.c_hat.to_bits(), r2.c_hat.to_bits());
    assert_eq!(r.g_hat.to_bits(), r2.g_hat.to_bits());

    let m = 31;
    let mut gx = vec![0.0; m];
    let mut center = vec![0.0; m];
    let mut lower = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let status = unsafe {
        sb_band(
            analysis,
            0.1,
            0.9,
            m,
            300,
            gx.as_mut_ptr(),
            center.as_mut_ptr(),
            lower.as_mut_ptr(),
            upper.as_mut_ptr(),
        )
    };
    assert_eq!(status, SbStatus::SbStatusOk);
    assert_eq!(gx[0], 0.1);
    assert_eq!(gx[m - 1], 0.9);
    for i in 0..m {
        assert!(lower[i] < center[i] && center[i] < upper[i]);
    }

    unsafe { sb_analysis_free(analysis) };
    // Freeing null handles is a no-op.
    unsafe {
        sb_dataset_free(std::ptr::null_mut());
        sb_analysis_free(std::ptr::null_mut());
    }
}

#[test]
fn null_arguments_are_rejected_without_crashing() {
    let (x, y) = sample(50);
    let mut dataset: *mut SbDataset = std::ptr::null_mut();
    let status =
        unsafe { sb_dataset_new(std::ptr::null(), y.as_ptr(), y.len(), &mut dataset) };
    assert_eq!(status, SbStatus::SbStatusNullArgument);
    let status = unsafe { sb_dataset_new(x.as_ptr(), y.as_ptr(), x.len(), std::ptr::null_mut()) };
    assert_eq!(status, SbStatus::SbStatusNullArgument);
    let status = unsafe { sb_ci_at(std::ptr::null(), 0.5, std::ptr::null_mut()) };
    assert_eq!(status, SbStatus::SbStatusNullArgument);
    assert!(last_error().contains("null argument"));
}

#[test]
fn invalid_inputs_return_code_2_with_a_message() {
    // Mismatched intent: n = 1 is too small to fit anything.
    let x = [0.5];
    let y = [1.0];
    let mut dataset: *mut SbDataset = std::ptr::null_mut();
    let status = unsafe { sb_dataset_new(x.as_ptr(), y.as_ptr(), 1, &mut dataset) };
    assert_eq!(status, SbStatus::SbStatusInvalidInput);
    assert!(dataset.is_null());
    assert!(!last_error().is_empty());

    // Non-positive standard error in the nested critical value.
    let ses = [0.5, -1.0];
    let mut c = 0.0;
    let status = unsafe {
        sb_critical_value_from_ses(ses.as_ptr(), ses.len(), 0.05, 1000, 1, &mut c, std::ptr::null_mut())
    };
    assert_eq!(status, SbStatus::SbStatusInvalidInput);
    assert!(last_error().contains("standard error"));
}

#[test]
fn nested_critical_value_matches_the_z_quantile_for_one_fit() {
    let ses = [0.25];
    let mut c = 0.0;
    let mut mc = 0.0;
    let status = unsafe {
        sb_critical_value_from_ses(ses.as_ptr(), 1, 0.05, 20000, 3, &mut c, &mut mc)
    };
    assert_eq!(status, SbStatus::SbStatusOk);
    assert!((c - 1.959964).abs() < 4.0 * mc + 0.02, "c = {c}, mc_se = {mc}");
}

#[test]
fn out_of_support_query_is_an_input_error() {
    let (x, y) = sample(120);
    let mut dataset: *mut SbDataset = std::ptr::null_mut();
    unsafe { sb_dataset_new(x.as_ptr(), y.as_ptr(), x.len(), &mut dataset) };
    let mut analysis: *mut SbAnalysis = std::ptr::null_mut();
    let status = unsafe { sb_analysis_new(dataset, 0.05, 500, 1, &mut analysis) };
    assert_eq!(status, SbStatus::SbStatusOk);
    let mut r = SbCiResult {
        g_hat: 0.0,
        se: 0.0,
        c_hat: 0.0,
        mc_se: 0.0,
        standard_lower: 0.0,
        standard_upper: 0.0,
        robust_lower: 0.0,
        robust_upper: 0.0,
        k_cv: 0,
    };
    let status = unsafe { sb_ci_at(analysis, 4.0, &mut r) };
    assert_eq!(status, SbStatus::SbStatusInvalidInput);
    assert!(last_error().contains("outside support"));
    unsafe {
        sb_analysis_free(analysis);
        sb_dataset_free(dataset);
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/seriesband.h"),
    )
    .expect("build script wrote the header");
    for needle in [
        "typedef struct SbDataset SbDataset;",
        "typedef struct SbAnalysis SbAnalysis;",
        "SB_STATUS_INVALID_INPUT = 2",
        "sb_dataset_new",
        "sb_analysis_new",
        "sb_ci_at",
        "sb_band",
        "sb_critical_value_from_ses",
        "sb_last_error",
        "sb_version",
    ] {
        assert!(header.contains(needle), "header is missing {needle:?}");
    }
}
