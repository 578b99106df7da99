use std::ffi::CStr;
use std::ptr;

use desatscan::nn::{save_checkpoint, Model, ModelConfig};
use desatscan::psg::{write_edf, Recording, RecordingHeader, SignalDef, SignalTrace};
use desatscan_ffi::*;
use rand::SeedableRng;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ds_last_error()) }.to_string_lossy().into_owned()
}

fn edf_bytes() -> Vec<u8> {
    let def = |label: &str, spr: usize| SignalDef {
        label: label.into(),
        sample_rate: spr as f64,
        physical_dimension: "uV".into(),
        physical_min: -500.0,
        physical_max: 500.0,
        digital_min: -32768,
        digital_max: 32767,
        samples_per_record: spr,
    };
    let eeg: Vec<f64> = (0..512).map(|i| (i as f64 * 0.1).sin() * 40.0).collect();
    let rec = Recording {
        header: RecordingHeader {
            subject_id: "X1".into(),
            recording_id: "ffi".into(),
            record_count: 2,
            record_duration: 1.0,
            signals: vec![def("C3-M2", 256), def("SpO2", 1)],
        },
        traces: vec![SignalTrace::new("C3-M2", 256.0, eeg), SignalTrace::new("SpO2", 1.0, vec![97.0, 96.0])],
    };
    write_edf(&rec).unwrap()
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(ds_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/desatscan.h")).unwrap();
    for name in ["ds_recording_open", "ds_model_predict", "ds_roc_auc", "DS_STATUS_OK", "typedef struct DsRecording DsRecording"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn recording_round_trip() {
    let bytes = edf_bytes();
    let mut rec = ptr::null_mut();
    unsafe {
        assert_eq!(ds_recording_open(bytes.as_ptr(), bytes.len(), &mut rec), DsStatus::Ok);
        assert!(!rec.is_null());
        let mut n = 0;
        assert_eq!(ds_recording_signal_count(rec, &mut n), DsStatus::Ok);
        assert_eq!(n, 2);
        let (mut fs, mut len) = (0.0, 0);
        assert_eq!(ds_recording_signal_info(rec, 0, &mut fs, &mut len), DsStatus::Ok);
        assert_eq!((fs, len), (256.0, 512));
        let mut label = [0 as std::ffi::c_char; 16];
        assert_eq!(ds_recording_signal_label(rec, 1, label.as_mut_ptr(), label.len()), DsStatus::Ok);
        assert_eq!(CStr::from_ptr(label.as_ptr()).to_str().unwrap(), "SpO2");
        assert_eq!(ds_recording_signal_label(rec, 1, label.as_mut_ptr(), 3), DsStatus::BufferTooSmall);
        let mut buf = vec![0.0; 2];
        assert_eq!(ds_recording_copy_samples(rec, 1, buf.as_mut_ptr(), buf.len()), DsStatus::Ok);
        assert!((buf[0] - 97.0).abs() < 0.02 && (buf[1] - 96.0).abs() < 0.02);
        assert_eq!(ds_recording_copy_samples(rec, 0, buf.as_mut_ptr(), buf.len()), DsStatus::BufferTooSmall);
        assert_eq!(ds_recording_signal_info(rec, 5, &mut fs, &mut len), DsStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        ds_recording_free(rec);
        ds_recording_free(ptr::null_mut());
    }
}

#[test]
fn bad_inputs_set_status_and_message() {
    let mut rec = ptr::null_mut();
    unsafe {
        assert_eq!(ds_recording_open(b"garbage".as_ptr(), 7, &mut rec), DsStatus::ParseError);
        assert!(rec.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(ds_recording_open(ptr::null(), 10, &mut rec), DsStatus::NullPointer);
        assert_eq!(ds_recording_open(b"x".as_ptr(), 1, ptr::null_mut()), DsStatus::NullPointer);
        let mut out = 0.0;
        assert_eq!(ds_roc_auc([0.1, 0.2].as_ptr(), [1u8, 1].as_ptr(), 2, &mut out), DsStatus::InvalidArgument);
        assert_eq!(ds_roc_auc([0.1, 0.2].as_ptr(), [0u8, 1].as_ptr(), 2, &mut out), DsStatus::Ok);
        assert!(last_error().is_empty());
        assert_eq!(out, 1.0);
    }
}

#[test]
fn metrics() {
    let scores = [0.9, 0.2, 0.6, 0.4];
    let labels = [1u8, 0, 0, 1];
    let (mut ba, mut auc) = (0.0, 0.0);
    unsafe {
        assert_eq!(ds_balanced_accuracy(scores.as_ptr(), labels.as_ptr(), 4, 0.5, &mut ba), DsStatus::Ok);
        assert_eq!(ds_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc), DsStatus::Ok);
    }
    assert_eq!(ba, 0.5);
    assert_eq!(auc, 0.75);
    let values = [0.7, 0.72, 0.68, 0.71];
    let (mut m, mut lo, mut hi) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(ds_ci95(values.as_ptr(), 4, DsCiMethod::StudentT, &mut m, &mut lo, &mut hi), DsStatus::Ok);
        assert!(lo < m && m < hi);
        assert_eq!(ds_ci95(values.as_ptr(), 1, DsCiMethod::Normal, &mut m, &mut lo, &mut hi), DsStatus::InvalidArgument);
    }
}

#[test]
fn denoise_and_spectrogram() {
    let n = 7680;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 60.0 * i as f64 / 256.0).sin()).collect();
    let mut y = vec![0.0; n];
    unsafe {
        assert_eq!(ds_denoise(x.as_ptr(), n, 256.0, y.as_mut_ptr()), DsStatus::Ok);
    }
    let mid = &y[n / 4..3 * n / 4];
    let rms = (mid.iter().map(|v| v * v).sum::<f64>() / mid.len() as f64).sqrt();
    assert!(rms < 0.01);

    let epoch: Vec<f64> = (0..7 * n).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut spec = vec![0f32; 7 * 129 * 61];
    unsafe {
        assert_eq!(ds_epoch_spectrogram(epoch.as_ptr(), epoch.len(), spec.as_mut_ptr(), spec.len()), DsStatus::Ok);
        assert_eq!(ds_epoch_spectrogram(epoch.as_ptr(), n, spec.as_mut_ptr(), spec.len()), DsStatus::InvalidArgument);
        assert_eq!(ds_epoch_spectrogram(epoch.as_ptr(), epoch.len(), spec.as_mut_ptr(), 10), DsStatus::BufferTooSmall);
    }
    assert!(spec.iter().all(|v| v.is_finite()));
}

#[test]
fn model_load_and_predict() {
    let cfg = ModelConfig {
        stem_channels: 2,
        blocks: vec![(2, 4)],
        ..ModelConfig::default()
    };
    let model: Model<f32> = Model::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
    let bytes = save_checkpoint(&model);
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(ds_model_load(bytes.as_ptr(), bytes.len(), &mut handle), DsStatus::Ok);
        let items: Vec<f32> = (0..2 * 7 * 129 * 61).map(|i| ((i % 97) as f32) * 0.01).collect();
        let mut scores = [0.0; 2];
        assert_eq!(ds_model_predict(handle, items.as_ptr(), 2, scores.as_mut_ptr()), DsStatus::Ok);
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        assert_eq!(ds_model_predict(ptr::null(), items.as_ptr(), 2, scores.as_mut_ptr()), DsStatus::NullPointer);
        ds_model_free(handle);
        assert_eq!(ds_model_load(bytes.as_ptr(), 10, &mut handle), DsStatus::ParseError);
        assert!(handle.is_null());
    }
}
