use std::ffi::{CStr, CString};
use std::ptr;

use treebp_ffi::*;

fn last_error() -> String {
    let p = treebp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tree3(k: usize, m: usize) -> *mut TreebpModel {
    let mut h = ptr::null_mut();
    let s = unsafe { treebp_model_new_tree3(k, m, TreebpActivation::Relu, TreebpGeometry::Mnist, false, 7, &mut h) };
    assert_eq!(s, TreebpStatus::Ok);
    assert!(!h.is_null());
    h
}

fn image(len: usize) -> Vec<f32> {
    (0..len).map(|i| ((i * 37 % 255) as f32 / 127.5) - 1.0).collect()
}

#[test]
fn route_counts() {
    assert_eq!(treebp_count_routes(TreebpArch::Lenet5), 1_008_000);
    assert_eq!(treebp_count_routes(TreebpArch::Tree3), 1);
    let (mut pre, mut post) = (0, 0);
    let s = unsafe { treebp_count_gradient_instances(TreebpArch::Tree3, 6, 16, &mut pre, &mut post) };
    assert_eq!(s, TreebpStatus::Ok);
    assert_eq!(pre, 5_644_800);
    let s = unsafe { treebp_count_gradient_instances(TreebpArch::Lenet5, 0, 0, &mut pre, &mut post) };
    assert_eq!(s, TreebpStatus::Ok);
    assert_eq!((pre, post), (352_800, 88_200));
}

#[test]
fn logits_predict_and_gradients() {
    let h = tree3(3, 2);
    let mut len = 0;
    assert_eq!(unsafe { treebp_model_input_len(h, &mut len) }, TreebpStatus::Ok);
    assert_eq!(len, 28 * 28);
    let img = image(len);
    let mut logits = [0f32; 10];
    assert_eq!(unsafe { treebp_model_logits(h, img.as_ptr(), len, logits.as_mut_ptr()) }, TreebpStatus::Ok);
    let mut class = 99;
    assert_eq!(unsafe { treebp_model_predict(h, img.as_ptr(), len, &mut class) }, TreebpStatus::Ok);
    let best = (0..10).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
    assert_eq!(class as usize, best);

    let (mut a, mut b) = (TreebpGradientStats::default(), TreebpGradientStats::default());
    assert_eq!(unsafe { treebp_gradient_stats(h, img.as_ptr(), len, 4, true, &mut a) }, TreebpStatus::Ok);
    assert_eq!(unsafe { treebp_gradient_stats(h, img.as_ptr(), len, 4, false, &mut b) }, TreebpStatus::Ok);
    assert_eq!(a, b);
    assert!(a.loss > 0.0);
    assert!(a.zero_fraction.iter().all(|f| (0.0..=1.0).contains(f)));
    unsafe { treebp_model_free(h) };
}

#[test]
fn errors_carry_codes_and_messages() {
    let h = tree3(2, 2);
    let img = image(10);
    let mut logits = [0f32; 10];
    let s = unsafe { treebp_model_logits(h, img.as_ptr(), img.len(), logits.as_mut_ptr()) };
    assert_eq!(s, TreebpStatus::ShapeMismatch);
    assert!(last_error().contains("784"), "{}", last_error());

    let s = unsafe { treebp_model_logits(ptr::null(), img.as_ptr(), 784, logits.as_mut_ptr()) };
    assert_eq!(s, TreebpStatus::NullPointer);

    let mut out = ptr::null_mut();
    let s = unsafe { treebp_model_new_tree3(0, 2, TreebpActivation::Relu, TreebpGeometry::Cifar, false, 1, &mut out) };
    assert_ne!(s, TreebpStatus::Ok);
    assert!(out.is_null());

    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let s = unsafe { treebp_model_load(missing.as_ptr(), &mut out) };
    assert_eq!(s, TreebpStatus::Io);
    unsafe { treebp_model_free(h) };
    unsafe { treebp_model_free(ptr::null_mut()) };
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let h = tree3(2, 3);
    assert_eq!(unsafe { treebp_model_save(h, path.as_ptr()) }, TreebpStatus::Ok);
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { treebp_model_load(path.as_ptr(), &mut g) }, TreebpStatus::Ok);
    let (mut n1, mut n2) = (0, 0);
    unsafe {
        treebp_model_num_params(h, &mut n1);
        treebp_model_num_params(g, &mut n2);
    }
    assert_eq!(n1, n2);
    let img = image(784);
    let (mut a, mut b) = ([0f32; 10], [0f32; 10]);
    unsafe {
        treebp_model_logits(h, img.as_ptr(), 784, a.as_mut_ptr());
        treebp_model_logits(g, img.as_ptr(), 784, b.as_mut_ptr());
        treebp_model_free(h);
        treebp_model_free(g);
    }
    assert_eq!(a, b);

    std::fs::write(dir.path().join("bad.ckpt"), b"TREEBPCK").unwrap();
    let bad = CString::new(dir.path().join("bad.ckpt").to_str().unwrap()).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { treebp_model_load(bad.as_ptr(), &mut out) }, TreebpStatus::Checkpoint);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(treebp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
