//! C ABI over the desatscan library.
//!
//! Every fallible function returns a [`DsStatus`]; on failure a message is
//! available from [`ds_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use desatscan::dsp::{denoise_with, Featurizer, NotchConfig, SpectrogramConfig, CHANNELS, EPOCH_SAMPLES, TENSOR_DIMS, TENSOR_LEN};
use desatscan::metrics::{balanced_accuracy, ci95, roc_auc, CiMethod};
use desatscan::nn::{load_checkpoint, predict_samples, Model, Samples};
use desatscan::psg::{parse_edf, Recording, SignalTrace};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    ComputeError = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsCiMethod {
    StudentT = 0,
    Normal = 1,
}

/// A parsed EDF recording.
pub struct DsRecording {
    inner: Recording,
}

/// A trained model loaded from a checkpoint.
pub struct DsModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Fail(DsStatus, String);

fn fail<T>(status: DsStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to `n` readable values.
unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(DsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or point to `n` writable values.
unsafe fn output<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(DsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

/// # Safety
/// `p` must be null or point to a writable `T`.
unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail(DsStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Parses an EDF file held in memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` to a writable
/// handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_open(bytes: *const u8, len: usize, out: *mut *mut DsRecording) -> DsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let bytes = input(bytes, len, "bytes")?;
        let (inner, _) = parse_edf(bytes).map_err(|e| Fail(DsStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(DsRecording { inner }));
        Ok(())
    })
}

/// # Safety
/// `rec` must be null or a handle from [`ds_recording_open`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_free(rec: *mut DsRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// # Safety
/// `rec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_signal_count(rec: *const DsRecording, out: *mut usize) -> DsStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or(Fail(DsStatus::NullPointer, "rec is null".into()))?;
        *out_ref(out, "out")? = rec.inner.traces.len();
        Ok(())
    })
}

/// Sample rate and sample count of signal `index`.
///
/// # Safety
/// `rec` must be a live handle; `sample_rate` and `n_samples` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_signal_info(
    rec: *const DsRecording,
    index: usize,
    sample_rate: *mut f64,
    n_samples: *mut usize,
) -> DsStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or(Fail(DsStatus::NullPointer, "rec is null".into()))?;
        let Some(t) = rec.inner.traces.get(index) else {
            return fail(DsStatus::InvalidArgument, format!("signal index {index} out of range"));
        };
        *out_ref(sample_rate, "sample_rate")? = t.sample_rate;
        *out_ref(n_samples, "n_samples")? = t.samples.len();
        Ok(())
    })
}

/// Copies the label of signal `index` as a NUL-terminated string into
/// `buf` of `capacity` bytes.
///
/// # Safety
/// `rec` must be a live handle and `buf` writable for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_signal_label(rec: *const DsRecording, index: usize, buf: *mut c_char, capacity: usize) -> DsStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or(Fail(DsStatus::NullPointer, "rec is null".into()))?;
        let Some(t) = rec.inner.traces.get(index) else {
            return fail(DsStatus::InvalidArgument, format!("signal index {index} out of range"));
        };
        let label = t.label.as_bytes();
        if capacity < label.len() + 1 {
            return fail(DsStatus::BufferTooSmall, format!("need {} bytes", label.len() + 1));
        }
        let buf = output(buf as *mut u8, capacity, "buf")?;
        buf[..label.len()].copy_from_slice(label);
        buf[label.len()] = 0;
        Ok(())
    })
}

/// Copies the physical samples of signal `index` into `out`.
///
/// # Safety
/// `rec` must be a live handle and `out` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ds_recording_copy_samples(rec: *const DsRecording, index: usize, out: *mut f64, capacity: usize) -> DsStatus {
    guard(|| {
        let rec = rec.as_ref().ok_or(Fail(DsStatus::NullPointer, "rec is null".into()))?;
        let Some(t) = rec.inner.traces.get(index) else {
            return fail(DsStatus::InvalidArgument, format!("signal index {index} out of range"));
        };
        if capacity < t.samples.len() {
            return fail(DsStatus::BufferTooSmall, format!("need {} values", t.samples.len()));
        }
        output(out, capacity, "out")?[..t.samples.len()].copy_from_slice(&t.samples);
        Ok(())
    })
}

/// Zero-phase removal of 60 Hz and 120 Hz line noise. `out` receives `n`
/// values and may alias `x`.
///
/// # Safety
/// `x` must be readable and `out` writable for `n` values.
#[no_mangle]
pub unsafe extern "C" fn ds_denoise(x: *const f64, n: usize, sample_rate: f64, out: *mut f64) -> DsStatus {
    guard(|| {
        let samples = input(x, n, "x")?.to_vec();
        let clean = denoise_with(&SignalTrace::new("x", sample_rate, samples), &NotchConfig::default())
            .map_err(|e| Fail(DsStatus::ComputeError, e.to_string()))?;
        output(out, n, "out")?.copy_from_slice(&clean.samples);
        Ok(())
    })
}

/// Log-magnitude spectrogram of one 30 s epoch.
///
/// `samples` holds 7 channels of 7680 samples, channel-major. `out`
/// receives 7 × 129 × 61 values laid out `[channel][bin][frame]`.
///
/// # Safety
/// `samples` must be readable for `len` values and `out` writable for
/// `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ds_epoch_spectrogram(samples: *const f64, len: usize, out: *mut f32, capacity: usize) -> DsStatus {
    guard(|| {
        if len != CHANNELS * EPOCH_SAMPLES {
            return fail(DsStatus::InvalidArgument, format!("expected {} samples, got {len}", CHANNELS * EPOCH_SAMPLES));
        }
        if capacity < TENSOR_LEN {
            return fail(DsStatus::BufferTooSmall, format!("need {TENSOR_LEN} values"));
        }
        let x = input(samples, len, "samples")?;
        let channels: Vec<Vec<f64>> = x.chunks(EPOCH_SAMPLES).map(<[f64]>::to_vec).collect();
        let featurizer = Featurizer::new(SpectrogramConfig::default()).map_err(|e| Fail(DsStatus::ComputeError, e.to_string()))?;
        let data = featurizer.features(&channels).map_err(|e| Fail(DsStatus::ComputeError, e.to_string()))?;
        output(out, capacity, "out")?[..TENSOR_LEN].copy_from_slice(&data);
        Ok(())
    })
}

/// Balanced accuracy, predicting positive when `score >= threshold`.
///
/// # Safety
/// `scores` and `labels` must be readable for `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_balanced_accuracy(scores: *const f64, labels: *const u8, n: usize, threshold: f64, out: *mut f64) -> DsStatus {
    guard(|| {
        let v = balanced_accuracy(input(scores, n, "scores")?, input(labels, n, "labels")?, threshold)
            .map_err(|e| Fail(DsStatus::InvalidArgument, e.to_string()))?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Area under the ROC curve; ties count one half.
///
/// # Safety
/// `scores` and `labels` must be readable for `n` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> DsStatus {
    guard(|| {
        let v = roc_auc(input(scores, n, "scores")?, input(labels, n, "labels")?)
            .map_err(|e| Fail(DsStatus::InvalidArgument, e.to_string()))?;
        *out_ref(out, "out")? = v;
        Ok(())
    })
}

/// Mean and 95 % confidence interval of `n >= 2` values.
///
/// # Safety
/// `values` must be readable for `n` values; `mean`, `lo`, `hi` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_ci95(values: *const f64, n: usize, method: DsCiMethod, mean: *mut f64, lo: *mut f64, hi: *mut f64) -> DsStatus {
    guard(|| {
        let method = match method {
            DsCiMethod::StudentT => CiMethod::StudentT,
            DsCiMethod::Normal => CiMethod::Normal,
        };
        let ci = ci95(input(values, n, "values")?, method).map_err(|e| Fail(DsStatus::InvalidArgument, e.to_string()))?;
        *out_ref(mean, "mean")? = ci.mean;
        *out_ref(lo, "lo")? = ci.lo;
        *out_ref(hi, "hi")? = ci.hi;
        Ok(())
    })
}

/// Loads a model checkpoint held in memory.
///
/// # Safety
/// `bytes` must be readable for `len` bytes and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_load(bytes: *const u8, len: usize, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let model = load_checkpoint(input(bytes, len, "bytes")?).map_err(|e| Fail(DsStatus::ParseError, e.to_string()))?;
        if model.config.in_channels != CHANNELS {
            return fail(DsStatus::InvalidArgument, format!("model expects {} channels, epochs have {CHANNELS}", model.config.in_channels));
        }
        *out = Box::into_raw(Box::new(DsModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`ds_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ds_model_free(model: *mut DsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Desaturation scores in (0, 1) for `n_items` spectrogram tensors laid
/// out back to back, each 7 × 129 × 61 values.
///
/// # Safety
/// `model` must be a live handle, `tensors` readable for
/// `n_items * 7 * 129 * 61` values and `scores` writable for `n_items`.
#[no_mangle]
pub unsafe extern "C" fn ds_model_predict(model: *const DsModel, tensors: *const f32, n_items: usize, scores: *mut f64) -> DsStatus {
    guard(|| {
        let model = model.as_ref().ok_or(Fail(DsStatus::NullPointer, "model is null".into()))?;
        let total = n_items
            .checked_mul(TENSOR_LEN)
            .ok_or(Fail(DsStatus::InvalidArgument, "n_items too large".into()))?;
        let x = input(tensors, total, "tensors")?;
        let samples = Samples {
            dims: TENSOR_DIMS,
            items: x.chunks(TENSOR_LEN).collect(),
            labels: vec![0; n_items],
        };
        let s = predict_samples(&model.inner, &samples).map_err(|e| Fail(DsStatus::ComputeError, e.to_string()))?;
        output(scores, n_items, "scores")?.copy_from_slice(&s);
        Ok(())
    })
}
