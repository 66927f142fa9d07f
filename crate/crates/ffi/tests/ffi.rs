use std::ffi::{CStr, CString};
use std::ptr;

use echopipe::cli::checkpoint::{save_disease_model, save_view_model};
use echopipe::diseasehead::{DiseaseModel, DiseaseModelConfig};
use echopipe::domain::{canonical_view_order, ViewLabel};
use echopipe::featnet::TrunkConfig;
use echopipe::ingest::synth_study;
use echopipe::viewnet::{ViewNet, ViewNetConfig};
use echopipe_ffi::*;
use serde_json::json;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ep_last_error_message()) }.to_string_lossy().into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ep_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn micro_metrics_match_the_library() {
    let counts = [5u64, 1, 0, 2, 7, 1, 0, 0, 4];
    let mut out = EpMicroMetrics::default();
    assert_eq!(unsafe { ep_micro_metrics(counts.as_ptr(), 3, &mut out) }, EpStatus::Ok);
    assert!((out.precision - 0.8).abs() < 1e-12, "{out:?}");
    assert!((out.recall - out.precision).abs() < 1e-12);
    assert!((out.f1 - out.precision).abs() < 1e-12);
    assert_eq!(unsafe { ep_micro_metrics(ptr::null(), 3, &mut out) }, EpStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let zeros = [0u64; 4];
    assert_eq!(unsafe { ep_micro_metrics(zeros.as_ptr(), 2, &mut out) }, EpStatus::Data);
}

#[test]
fn missing_checkpoint_reports_a_message() {
    let path = CString::new("/nonexistent/viewnet.ckpt").unwrap();
    let mut h: *mut EpViewModel = ptr::null_mut();
    let s = unsafe { ep_view_model_load(path.as_ptr(), &mut h) };
    assert_eq!(s, EpStatus::Checkpoint);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"), "{}", last_error());
    assert_eq!(unsafe { ep_view_model_load(ptr::null(), &mut h) }, EpStatus::InvalidArgument);
}

#[test]
fn wrong_module_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let model = DiseaseModel::new(DiseaseModelConfig::new(TrunkConfig::tiny()), 0).unwrap();
    let p = dir.path().join("d.ckpt");
    save_disease_model(&model, "tiny", json!({}), json!({}), &p).unwrap();
    let mut h: *mut EpViewModel = ptr::null_mut();
    assert_eq!(unsafe { ep_view_model_load(cpath(&p).as_ptr(), &mut h) }, EpStatus::Checkpoint);
}

#[test]
fn view_model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = ViewNet::new(ViewNetConfig::tiny(), 3).unwrap();
    let p = dir.path().join("v.ckpt");
    save_view_model(&net, "tiny", json!({}), json!({}), &p).unwrap();
    let img = synth_study(1, echopipe::domain::DiseaseLabel::Hcm).views[&ViewLabel::Plax].clone();
    let expect = net.logits(&img).unwrap();

    let mut h: *mut EpViewModel = ptr::null_mut();
    assert_eq!(unsafe { ep_view_model_load(cpath(&p).as_ptr(), &mut h) }, EpStatus::Ok, "{}", last_error());
    let mut logits = [0.0f64; EP_NUM_VIEW_CLASSES];
    let mut label = 99u32;
    let s = unsafe { ep_view_model_predict(h, img.pixels.as_ptr(), 224, 224, logits.as_mut_ptr(), &mut label) };
    assert_eq!(s, EpStatus::Ok, "{}", last_error());
    assert_eq!(logits.to_vec(), expect);
    assert!((label as usize) < EP_NUM_VIEW_CLASSES);

    let s = unsafe { ep_view_model_predict(h, ptr::null(), 224, 224, logits.as_mut_ptr(), &mut label) };
    assert_eq!(s, EpStatus::InvalidArgument);
    let nan = vec![f32::NAN; 16];
    let s = unsafe { ep_view_model_predict(h, nan.as_ptr(), 4, 4, logits.as_mut_ptr(), &mut label) };
    assert_eq!(s, EpStatus::Data);
    unsafe { ep_view_model_free(h) };
    unsafe { ep_view_model_free(ptr::null_mut()) };
}

#[test]
fn disease_model_round_trip_and_missing_view() {
    let dir = tempfile::tempdir().unwrap();
    let model = DiseaseModel::new(DiseaseModelConfig::new(TrunkConfig::tiny()), 5).unwrap();
    let p = dir.path().join("d.ckpt");
    save_disease_model(&model, "tiny", json!({}), json!({}), &p).unwrap();
    let study = synth_study(2, echopipe::domain::DiseaseLabel::Ca);
    let expect = model.logits(&study).unwrap();

    let mut h: *mut EpDiseaseModel = ptr::null_mut();
    assert_eq!(unsafe { ep_disease_model_load(cpath(&p).as_ptr(), &mut h) }, EpStatus::Ok, "{}", last_error());
    let mut frames: Vec<*const f32> = canonical_view_order().iter().map(|v| study.views[v].pixels.as_ptr()).collect();
    let mut logits = [0.0f64; EP_NUM_DISEASES];
    let mut label = 0u32;
    let s = unsafe { ep_disease_model_predict(h, frames.as_ptr(), 224, 224, logits.as_mut_ptr(), &mut label) };
    assert_eq!(s, EpStatus::Ok, "{}", last_error());
    assert_eq!(logits.to_vec(), expect);
    assert_eq!(last_error(), "");

    frames[3] = ptr::null();
    let s = unsafe { ep_disease_model_predict(h, frames.as_ptr(), 224, 224, logits.as_mut_ptr(), &mut label) };
    assert_eq!(s, EpStatus::Data);
    assert!(last_error().contains("missing view PSAX_MP"), "{}", last_error());
    unsafe { ep_disease_model_free(h) };
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/echopipe.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ep_version",
        "ep_last_error_message",
        "ep_view_model_load",
        "ep_view_model_predict",
        "ep_view_model_free",
        "ep_disease_model_load",
        "ep_disease_model_predict",
        "ep_disease_model_free",
        "ep_micro_metrics",
        "EP_STATUS_OK",
        "EpMicroMetrics",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // Syntax check with the system C compiler when one is present.
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"echopipe.h\"\nint main(void) { EpMicroMetrics m; uint64_t c[1] = {1};\n\
         return ep_micro_metrics(c, 1, &m) == EP_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    match std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
