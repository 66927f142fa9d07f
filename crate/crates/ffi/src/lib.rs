//! C interface to trained echopipe models.
//!
//! Every function returns an [`EpStatus`]; on failure the message is kept per
//! thread and read with [`ep_last_error_message`]. Models are opaque handles
//! released with their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use echopipe::cli::checkpoint::{load_disease_model, load_view_model};
use echopipe::diseasehead::DiseaseModel;
use echopipe::domain::{canonical_view_order, DiseaseLabel, EchoImage, PatientStudy, Prediction};
use echopipe::eval::{micro_metrics, ConfusionMatrix};
use echopipe::ingest::conform;
use echopipe::viewnet::{vit_forward, ViewNet};
use echopipe::Error;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpStatus {
    Ok = 0,
    /// Null pointer, bad size or non-UTF-8 path.
    InvalidArgument = 1,
    Io = 2,
    Checkpoint = 3,
    /// Malformed image or study (shape, non-finite values, missing view).
    Data = 4,
    /// A Rust panic was caught.
    Internal = 5,
}

/// Number of view classes written by [`ep_view_model_predict`].
pub const EP_NUM_VIEW_CLASSES: usize = 6;
/// Number of disease classes written by [`ep_disease_model_predict`].
pub const EP_NUM_DISEASES: usize = 3;
/// Images per study passed to [`ep_disease_model_predict`].
pub const EP_NUM_VIEWS: usize = 5;

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpMicroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Opaque view-classifier handle.
pub struct EpViewModel {
    net: ViewNet,
}

/// Opaque disease-model handle.
pub struct EpDiseaseModel {
    model: DiseaseModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> EpStatus {
    match e {
        Error::Io(_) => EpStatus::Io,
        Error::Checkpoint(_) => EpStatus::Checkpoint,
        Error::Config(_) => EpStatus::InvalidArgument,
        Error::Fold { source, .. } => status_of(source),
        _ => EpStatus::Data,
    }
}

struct Fail(EpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(EpStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            EpStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(invalid("path is null"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn image_arg(pixels: *const f32, width: usize, height: usize) -> Result<EchoImage, Fail> {
    if pixels.is_null() {
        return Err(invalid("pixel buffer is null"));
    }
    let n = width.checked_mul(height).filter(|&n| n > 0).ok_or_else(|| invalid("image has zero area"))?;
    let data = std::slice::from_raw_parts(pixels, n).to_vec();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Fail(EpStatus::Data, "pixel buffer holds non-finite values".into()));
    }
    let img = EchoImage::from_pixels(width, height, data.iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    Ok(conform(&img)?)
}

unsafe fn write_prediction(p: &Prediction, out_logits: *mut f64, out_label: *mut u32) {
    if !out_logits.is_null() {
        std::ptr::copy_nonoverlapping(p.logits.as_ptr(), out_logits, p.logits.len());
    }
    if !out_label.is_null() {
        *out_label = p.label as u32;
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a view-classifier checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_view_model_load(path: *const c_char, out: *mut *mut EpViewModel) -> EpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let (net, _) = load_view_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EpViewModel { net }));
        Ok(())
    })
}

/// Classifies one grayscale frame (`width × height` floats in `[0, 1]`,
/// row-major; resized to 224×224). Writes 6 logits and the class index
/// (A4C, PLAX, PSAX_MV, PSAX_MP, PSAX_AC, OTHER). Either output may be null.
///
/// # Safety
/// `pixels` must hold `width * height` floats; `out_logits`, when non-null, 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn ep_view_model_predict(
    model: *const EpViewModel,
    pixels: *const f32,
    width: usize,
    height: usize,
    out_logits: *mut f64,
    out_label: *mut u32,
) -> EpStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let img = image_arg(pixels, width, height)?;
        let p = vit_forward(&model.net, &img)?;
        write_prediction(&p, out_logits, out_label);
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ep_view_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ep_view_model_free(model: *mut EpViewModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a disease-model checkpoint into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_disease_model_load(path: *const c_char, out: *mut *mut EpDiseaseModel) -> EpStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let (model, _) = load_disease_model(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(EpDiseaseModel { model }));
        Ok(())
    })
}

/// Classifies a study from five frames in the order A4C, PLAX, PSAX_MV,
/// PSAX_MP, PSAX_AC, all `width × height`. Writes 3 logits and the class index
/// (HCM, CA, NORMAL). A null frame is reported as a missing view.
///
/// # Safety
/// `views` must point to 5 pointers, each null or holding `width * height`
/// floats; `out_logits`, when non-null, must hold 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ep_disease_model_predict(
    model: *const EpDiseaseModel,
    views: *const *const f32,
    width: usize,
    height: usize,
    out_logits: *mut f64,
    out_label: *mut u32,
) -> EpStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        if views.is_null() {
            return Err(invalid("views is null"));
        }
        let ptrs = std::slice::from_raw_parts(views, EP_NUM_VIEWS);
        let mut study = PatientStudy { patient_id: "ffi".into(), views: Default::default(), disease: DiseaseLabel::Normal };
        for (&v, &p) in canonical_view_order().iter().zip(ptrs) {
            if p.is_null() {
                return Err(Error::MissingView(v).into());
            }
            study.views.insert(v, image_arg(p, width, height)?);
        }
        let p = model.model.predict(&study)?;
        write_prediction(&p, out_logits, out_label);
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ep_disease_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ep_disease_model_free(model: *mut EpDiseaseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Micro-averaged precision, recall and F1 of a `k × k` confusion matrix
/// (row = truth, column = prediction, row-major).
///
/// # Safety
/// `counts` must hold `k * k` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ep_micro_metrics(counts: *const u64, k: usize, out: *mut EpMicroMetrics) -> EpStatus {
    guard(|| {
        if counts.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let n = k.checked_mul(k).filter(|&n| n > 0).ok_or_else(|| invalid("k must be positive"))?;
        let flat = std::slice::from_raw_parts(counts, n);
        let cm = ConfusionMatrix::from_counts(flat.chunks(k).map(<[u64]>::to_vec).collect())?;
        let m = micro_metrics(&cm)?;
        *out = EpMicroMetrics { precision: m.precision, recall: m.recall, f1: m.f1 };
        Ok(())
    })
}
