use std::ffi::{CStr, CString};
use std::ptr;

use modedbm_ffi::*;

fn last_error() -> String {
    let p = modedbm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_model(sizes: &[usize], std: f64, seed: u64) -> *mut ModedbmModel {
    let mut m = ptr::null_mut();
    let st = unsafe { modedbm_model_new(sizes.as_ptr(), sizes.len(), std, seed, &mut m) };
    assert_eq!(st, ModedbmStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(modedbm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn zero_model_log_z_is_node_count_ln2() {
    let m = new_model(&[4, 3, 2], 0.0, 0);
    let mut lz = f64::NAN;
    assert_eq!(unsafe { modedbm_exact_log_z(m, &mut lz) }, ModedbmStatus::Ok);
    assert!((lz - 9.0 * 2f64.ln()).abs() < 1e-12);
    let mut n = 0;
    unsafe {
        assert_eq!(modedbm_model_num_layers(m, &mut n), ModedbmStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(modedbm_model_layer_size(m, 1, &mut n), ModedbmStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(modedbm_model_layer_size(m, 3, &mut n), ModedbmStatus::InvalidArgument);
        modedbm_model_free(m);
    }
}

#[test]
fn null_pointers_are_reported() {
    let mut out = 0.0;
    let st = unsafe { modedbm_exact_log_z(ptr::null(), &mut out) };
    assert_eq!(st, ModedbmStatus::NullPointer);
    assert!(last_error().contains("model"));
    let m = new_model(&[2, 2], 0.1, 1);
    assert_eq!(unsafe { modedbm_exact_log_z(m, ptr::null_mut()) }, ModedbmStatus::NullPointer);
    unsafe {
        modedbm_model_free(m);
        modedbm_model_free(ptr::null_mut());
        modedbm_dataset_free(ptr::null_mut());
        modedbm_string_free(ptr::null_mut());
    }
}

#[test]
fn bad_shape_is_invalid_argument() {
    let mut m = ptr::null_mut();
    let sizes = [4usize];
    let st = unsafe { modedbm_model_new(sizes.as_ptr(), 1, 0.1, 0, &mut m) };
    assert_eq!(st, ModedbmStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn json_round_trip_preserves_energy() {
    let m = new_model(&[3, 4, 2], 0.5, 7);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { modedbm_model_to_json(m, &mut json) }, ModedbmStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { modedbm_model_from_json(json, &mut back) }, ModedbmStatus::Ok);
    let state = [1u8, 0, 1, 1, 1, 0, 1, 0, 1];
    let (mut e1, mut e2) = (0.0, 0.0);
    unsafe {
        assert_eq!(modedbm_energy(m, state.as_ptr(), state.len(), &mut e1), ModedbmStatus::Ok);
        assert_eq!(modedbm_energy(back, state.as_ptr(), state.len(), &mut e2), ModedbmStatus::Ok);
        assert_eq!(modedbm_energy(m, state.as_ptr(), 8, &mut e2), ModedbmStatus::InvalidArgument);
        modedbm_string_free(json);
        modedbm_model_free(m);
        modedbm_model_free(back);
    }
    assert_eq!(e1, e2);
}

#[test]
fn malformed_json_is_format_error() {
    let bad = CString::new("{\"weights\": 3").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { modedbm_model_from_json(bad.as_ptr(), &mut m) }, ModedbmStatus::Format);
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let m = new_model(&[5, 3], 0.3, 2);
    let mut back = ptr::null_mut();
    let (mut a, mut b) = (0.0, 0.0);
    unsafe {
        assert_eq!(modedbm_model_save(m, path.as_ptr()), ModedbmStatus::Ok);
        assert_eq!(modedbm_model_load(path.as_ptr(), &mut back), ModedbmStatus::Ok);
        modedbm_exact_log_z(m, &mut a);
        modedbm_exact_log_z(back, &mut b);
        modedbm_model_free(m);
        modedbm_model_free(back);
    }
    assert_eq!(a, b);
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    let mut x = ptr::null_mut();
    assert_eq!(unsafe { modedbm_model_load(missing.as_ptr(), &mut x) }, ModedbmStatus::Io);
}

#[test]
fn ais_tracks_exact_log_z() {
    let m = new_model(&[5, 4, 3], 0.5, 11);
    let (mut exact, mut est, mut se) = (0.0, 0.0, 0.0);
    unsafe {
        modedbm_exact_log_z(m, &mut exact);
        assert_eq!(modedbm_ais_log_z(m, 10, 5, 3, &mut est, ptr::null_mut()), ModedbmStatus::Ok);
        assert_eq!(modedbm_ais_log_z(m, 500, 50, 3, &mut est, &mut se), ModedbmStatus::Ok);
        modedbm_model_free(m);
    }
    assert!(se > 0.0);
    assert!((est - exact).abs() < 0.1, "{est} vs {exact}");
}

#[test]
fn exact_mode_free_and_clamped() {
    let m = new_model(&[4, 3, 2], 1.0, 5);
    let mut state = [9u8; 9];
    let mut e = 0.0;
    let mut check = 0.0;
    unsafe {
        assert_eq!(modedbm_exact_mode(m, ptr::null(), state.as_mut_ptr(), 9, &mut e), ModedbmStatus::Ok);
        modedbm_energy(m, state.as_ptr(), 9, &mut check);
        assert_eq!(e, check);
        let clamp = [1u8, 0, 1, 0];
        let mut ec = 0.0;
        assert_eq!(modedbm_exact_mode(m, clamp.as_ptr(), state.as_mut_ptr(), 9, &mut ec), ModedbmStatus::Ok);
        assert_eq!(&state[..4], &clamp);
        assert!(ec >= e);
        assert_eq!(
            modedbm_exact_mode(m, ptr::null(), state.as_mut_ptr(), 8, ptr::null_mut()),
            ModedbmStatus::InvalidArgument
        );
        modedbm_model_free(m);
    }
    assert!(state.iter().all(|&b| b <= 1));
}

#[test]
fn too_large_for_enumeration_is_capacity() {
    let m = new_model(&[30, 30], 0.1, 0);
    let mut lz = 0.0;
    assert_eq!(unsafe { modedbm_exact_log_z(m, &mut lz) }, ModedbmStatus::Capacity);
    unsafe { modedbm_model_free(m) };
}

#[test]
fn param_count_and_schedule() {
    let sizes = [784usize, 120, 18];
    let mut n = 0;
    assert_eq!(unsafe { modedbm_param_count(sizes.as_ptr(), 3, &mut n) }, ModedbmStatus::Ok);
    assert_eq!(n, 784 * 120 + 120 * 18 + 784 + 120 + 18);
    let mut p = 0.0;
    assert_eq!(unsafe { modedbm_mode_probability(30_000.0, 100_000, &mut p) }, ModedbmStatus::Ok);
    assert!((p - 0.05).abs() < 1e-6);
    assert_eq!(unsafe { modedbm_mode_probability(0.0, 0, &mut p) }, ModedbmStatus::InvalidArgument);
}

#[test]
fn datasets() {
    let mut d = ptr::null_mut();
    let (mut len, mut dim) = (0, 0);
    unsafe {
        assert_eq!(modedbm_dataset_shifting_bar(6, 3, &mut d), ModedbmStatus::Ok);
        modedbm_dataset_len(d, &mut len);
        modedbm_dataset_dim(d, &mut dim);
        modedbm_dataset_free(d);
    }
    assert_eq!((len, dim), (6, 6));
    let bits = [0u8, 1, 1, 0, 2, 0];
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { modedbm_dataset_from_bits(bits.as_ptr(), 2, 3, &mut bad) }, ModedbmStatus::InvalidArgument);
    assert!(bad.is_null());
}

#[test]
fn train_improves_shifting_bar() {
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { modedbm_dataset_shifting_bar(4, 2, &mut d) }, ModedbmStatus::Ok);
    let config = CString::new(r#"{"shape":[4,4,1],"seed":3,"total_updates":3000,"lr_start":0.5,"lr_end":0.01}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { modedbm_train(config.as_ptr(), d, &mut m) }, ModedbmStatus::Ok);
    let mut ll = 0.0;
    assert_eq!(unsafe { modedbm_exact_avg_ll(m, d, &mut ll) }, ModedbmStatus::Ok);
    assert!(ll > -4.0 * 2f64.ln() + 0.5, "avg ll {ll}");
    let wrong = new_model(&[5, 2], 0.1, 0);
    assert_eq!(unsafe { modedbm_exact_avg_ll(wrong, d, &mut ll) }, ModedbmStatus::InvalidArgument);
    let unknown = CString::new(r#"{"shape":[4,4,1],"total_updates":0}"#).unwrap();
    let mut x = ptr::null_mut();
    assert_ne!(unsafe { modedbm_train(unknown.as_ptr(), d, &mut x) }, ModedbmStatus::Ok);
    unsafe {
        modedbm_model_free(m);
        modedbm_model_free(wrong);
        modedbm_dataset_free(d);
    }
}
