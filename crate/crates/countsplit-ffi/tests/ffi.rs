//! Exercises the C entry points from Rust: handle lifecycle, status codes,
//! error messages, and agreement between the generated header and the
//! exported symbols.

use std::ffi::{CStr, CString};
use std::ptr;

use countsplit_ffi::*;

fn checkerboard(n: usize, p: usize) -> Vec<u64> {
    (0..n * p).map(|i| (i % 7 + 1) as u64).collect()
}

unsafe fn make_matrix(n: usize, p: usize) -> *mut cs_matrix {
    let counts = checkerboard(n, p);
    let mut m: *mut cs_matrix = ptr::null_mut();
    let status = cs_matrix_from_counts(n, p, counts.as_ptr(), &mut m);
    assert_eq!(status, cs_status::CS_OK);
    assert!(!m.is_null());
    m
}

unsafe fn last_error() -> String {
    CStr::from_ptr(cs_last_error_message()).to_string_lossy().into_owned()
}

#[test]
fn matrix_round_trip_and_split_additivity() {
    unsafe {
        let m = make_matrix(20, 5);
        assert_eq!(cs_matrix_n_cells(m), 20);
        assert_eq!(cs_matrix_n_genes(m), 5);

        let mut train: *mut cs_matrix = ptr::null_mut();
        let mut test: *mut cs_matrix = ptr::null_mut();
        assert_eq!(cs_count_split(m, 0.5, 7, &mut train, &mut test), cs_status::CS_OK);
        assert_eq!(cs_matrix_n_cells(train), 20);
        assert_eq!(cs_matrix_n_genes(test), 5);

        let dir = tempfile::tempdir().unwrap();
        let original = dir.path().join("m.csv");
        let reloaded_path = CString::new(original.to_str().unwrap()).unwrap();
        assert_eq!(cs_matrix_save(m, reloaded_path.as_ptr()), cs_status::CS_OK);
        let mut reloaded: *mut cs_matrix = ptr::null_mut();
        assert_eq!(cs_matrix_load(reloaded_path.as_ptr(), &mut reloaded), cs_status::CS_OK);
        assert_eq!(cs_matrix_n_cells(reloaded), 20);

        // Train + test sums back to the original entry count.
        let total: u64 = checkerboard(20, 5).iter().sum();
        let train_file = dir.path().join("train.csv");
        let test_file = dir.path().join("test.csv");
        for (handle, path) in [(train, &train_file), (test, &test_file)] {
            let c = CString::new(path.to_str().unwrap()).unwrap();
            assert_eq!(cs_matrix_save(handle, c.as_ptr()), cs_status::CS_OK);
        }
        let sum_of = |path: &std::path::Path| -> u64 {
            std::fs::read_to_string(path)
                .unwrap()
                .split([',', '\n'])
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<u64>().unwrap())
                .sum()
        };
        assert_eq!(sum_of(&train_file) + sum_of(&test_file), total);

        cs_matrix_free(m);
        cs_matrix_free(train);
        cs_matrix_free(test);
        cs_matrix_free(reloaded);
    }
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut out: *mut cs_matrix = ptr::null_mut();
        assert_eq!(
            cs_matrix_from_counts(2, 2, ptr::null(), &mut out),
            cs_status::CS_ERR_NULL_ARG
        );
        assert!(!last_error().is_empty());
        assert_eq!(cs_matrix_n_cells(ptr::null()), 0);
        assert_eq!(cs_count_split(ptr::null(), 0.5, 1, &mut out, &mut out), cs_status::CS_ERR_NULL_ARG);
        cs_matrix_free(ptr::null_mut()); // no-op, must not crash
        cs_report_free(ptr::null_mut());
        cs_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_config_status() {
    unsafe {
        let m = make_matrix(10, 3);
        let mut train: *mut cs_matrix = ptr::null_mut();
        let mut test: *mut cs_matrix = ptr::null_mut();
        let status = cs_count_split(m, 1.5, 1, &mut train, &mut test);
        assert_eq!(status, cs_status::CS_ERR_CONFIG);
        assert!(last_error().contains("1.5"), "{}", last_error());
        cs_matrix_free(m);
    }
}

#[test]
fn io_and_utf8_failures_have_their_own_codes() {
    unsafe {
        let mut out: *mut cs_matrix = ptr::null_mut();
        let missing = CString::new("/nonexistent/countsplit/x.csv").unwrap();
        assert_eq!(cs_matrix_load(missing.as_ptr(), &mut out), cs_status::CS_ERR_IO);

        let bad = [0xffu8, 0xfe, 0x00];
        assert_eq!(
            cs_matrix_load(bad.as_ptr().cast(), &mut out),
            cs_status::CS_ERR_UTF8
        );
    }
}

#[test]
fn de_run_reports_pvalues_and_json() {
    unsafe {
        let m = make_matrix(40, 4);
        let config =
            CString::new(r#"{"method": "count_split", "epsilon": 0.5, "seed": 3, "gamma": "unit"}"#)
                .unwrap();
        let mut report: *mut cs_report = ptr::null_mut();
        assert_eq!(cs_de_run(m, config.as_ptr(), &mut report), cs_status::CS_OK);
        let n = cs_report_n_genes(report);
        assert_eq!(n, 4);

        let mut pvalues = vec![0.0f64; n];
        assert_eq!(cs_report_pvalues(report, pvalues.as_mut_ptr(), n), cs_status::CS_OK);
        for p in &pvalues {
            assert!(p.is_nan() || (0.0..=1.0).contains(p));
        }
        // Wrong buffer length is a config error, not a write.
        assert_eq!(
            cs_report_pvalues(report, pvalues.as_mut_ptr(), n - 1),
            cs_status::CS_ERR_CONFIG
        );

        let mut json: *mut std::ffi::c_char = ptr::null_mut();
        assert_eq!(cs_report_to_json(report, &mut json), cs_status::CS_OK);
        let text = CStr::from_ptr(json).to_str().unwrap();
        let value: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(value["results"].as_array().unwrap().len(), 4);
        cs_string_free(json);

        cs_report_free(report);
        cs_matrix_free(m);
    }
}

#[test]
fn de_run_rejects_bad_config() {
    unsafe {
        let m = make_matrix(10, 2);
        let mut report: *mut cs_report = ptr::null_mut();
        let bad = CString::new(r#"{"method": "tsne"}"#).unwrap();
        assert_eq!(cs_de_run(m, bad.as_ptr(), &mut report), cs_status::CS_ERR_CONFIG);
        let not_json = CString::new("not json").unwrap();
        assert_eq!(cs_de_run(m, not_json.as_ptr(), &mut report), cs_status::CS_ERR_CONFIG);
        cs_matrix_free(m);
    }
}

#[test]
fn header_declares_every_exported_symbol() {
    let header = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/countsplit.h"),
    )
    .expect("generated header present");
    for symbol in [
        "cs_last_error_message",
        "cs_matrix_load",
        "cs_matrix_from_counts",
        "cs_matrix_save",
        "cs_matrix_n_cells",
        "cs_matrix_n_genes",
        "cs_matrix_free",
        "cs_count_split",
        "cs_de_run",
        "cs_report_n_genes",
        "cs_report_pvalues",
        "cs_report_to_json",
        "cs_report_free",
        "cs_string_free",
        "CS_ERR_NULL_ARG",
    ] {
        assert!(header.contains(symbol), "header missing {symbol}");
    }
    assert!(header.contains("COUNTSPLIT_H"));
}
