use std::ffi::{CStr, CString};
use std::ptr;

use ctf_prune_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = ctf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn small_config() -> *mut CtfConfig {
    let cfg = ctf_config_new();
    for (k, v) in [("epochs", "40"), ("mode", "fine"), ("rate", "0.9"), ("seed", "1")] {
        assert_eq!(unsafe { ctf_config_set(cfg, cstr(k).as_ptr(), cstr(v).as_ptr()) }, CtfStatus::Ok);
    }
    cfg
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(ctf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn bad_config_reports_error() {
    let cfg = ctf_config_new();
    let st = unsafe { ctf_config_set(cfg, cstr("no_such_key").as_ptr(), cstr("1").as_ptr()) };
    assert_eq!(st, CtfStatus::InvalidArgument);
    assert!(last_error().contains("no_such_key"));
    let st = unsafe { ctf_config_set(cfg, cstr("rate").as_ptr(), cstr("1.5").as_ptr()) };
    let mut model = ptr::null_mut();
    let st2 = unsafe { ctf_train(cfg, &mut model) };
    assert!(st != CtfStatus::Ok || st2 == CtfStatus::InvalidArgument);
    assert!(model.is_null());
    unsafe { ctf_config_free(cfg) };
}

#[test]
fn null_handles_are_rejected() {
    let mut out = 0.0;
    assert_eq!(unsafe { ctf_model_pruning_rate(ptr::null(), 0.5, &mut out) }, CtfStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { ctf_config_set(ptr::null_mut(), ptr::null(), ptr::null()) }, CtfStatus::NullPointer);
    unsafe {
        ctf_model_free(ptr::null_mut());
        ctf_config_free(ptr::null_mut());
    }
    assert!(unsafe { ctf_model_test_accuracy(ptr::null()) }.is_nan());
}

#[test]
fn missing_checkpoint_is_io_error() {
    let mut model = ptr::null_mut();
    let st = unsafe { ctf_model_load(cstr("/nonexistent/model.ckpt").as_ptr(), &mut model) };
    assert_eq!(st, CtfStatus::Io);
    assert!(model.is_null());
}

#[test]
fn train_save_load_predict_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { ctf_train(cfg, &mut model) }, CtfStatus::Ok, "{}", last_error_or_none());
    assert!(!model.is_null());
    let acc = unsafe { ctf_model_test_accuracy(model) };
    assert!((0.0..=1.0).contains(&acc));

    let mut rate = 0.0;
    assert_eq!(unsafe { ctf_model_pruning_rate(model, 0.5, &mut rate) }, CtfStatus::Ok);
    assert!((0.0..=1.0).contains(&rate));

    let (mut s, mut n, mut k) = (0, 0, 0);
    assert_eq!(unsafe { ctf_model_input_shape(model, &mut s, &mut n, &mut k) }, CtfStatus::Ok);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { ctf_model_layer_shape(model, 1, &mut r, &mut c) }, CtfStatus::Ok);
    let mut mask = vec![9u8; r * c];
    assert_eq!(unsafe { ctf_model_mask(model, 1, 0.5, mask.as_mut_ptr(), mask.len()) }, CtfStatus::Ok);
    assert!(mask.iter().all(|&m| m <= 1));
    assert_eq!(unsafe { ctf_model_mask(model, 1, 0.5, mask.as_mut_ptr(), 3) }, CtfStatus::InvalidArgument);
    assert_eq!(unsafe { ctf_model_layer_shape(model, 3, &mut r, &mut c) }, CtfStatus::InvalidArgument);

    let batch = 3;
    let x: Vec<f64> = (0..batch * s * n).map(|i| ((i * 37 % 11) as f64) / 11.0 - 0.5).collect();
    let mut before = vec![0u32; batch];
    assert_eq!(unsafe { ctf_model_predict(model, x.as_ptr(), batch, 0.5, before.as_mut_ptr()) }, CtfStatus::Ok);
    assert!(before.iter().all(|&l| (l as usize) < k));

    let path = cstr(dir.path().join("m.ckpt").to_str().unwrap());
    assert_eq!(unsafe { ctf_model_save(model, path.as_ptr()) }, CtfStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { ctf_model_load(path.as_ptr(), &mut loaded) }, CtfStatus::Ok);
    let mut after = vec![0u32; batch];
    assert_eq!(unsafe { ctf_model_predict(loaded, x.as_ptr(), batch, 0.5, after.as_mut_ptr()) }, CtfStatus::Ok);
    assert_eq!(before, after);
    let mut rate2 = 0.0;
    unsafe { ctf_model_pruning_rate(loaded, 0.5, &mut rate2) };
    assert_eq!(rate, rate2);

    let export = dir.path().join("m.txt");
    let st = unsafe { ctf_model_export(loaded, 0.5, cstr(export.to_str().unwrap()).as_ptr()) };
    match st {
        CtfStatus::Ok => assert!(std::fs::read_to_string(&export).unwrap().starts_with("ctf-prune-compact 1")),
        CtfStatus::Structural => assert!(last_error().contains("structural")),
        other => panic!("unexpected export status {other:?}"),
    }

    unsafe {
        ctf_model_free(model);
        ctf_model_free(loaded);
        ctf_config_free(cfg);
    }
}

fn last_error_or_none() -> String {
    let p = ctf_last_error();
    if p.is_null() {
        "none".into()
    } else {
        last_error()
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ctf_prune.h")).unwrap();
    for sym in ["ctf_train", "ctf_model_predict", "ctf_last_error", "CTF_STATUS_OK", "typedef struct CtfModel"] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}
