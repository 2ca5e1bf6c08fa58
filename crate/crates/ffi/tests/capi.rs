use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use sqa_core::model::{load_checkpoint, save_checkpoint, Predictor, PredictorConfig};
use sqa_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sqa_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn features(frames: &[f32], t: usize, d: usize) -> *mut SqaFeatures {
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { sqa_features_from_frames(frames.as_ptr(), t, d, 3, &mut f) },
        SqaStatus::Ok
    );
    f
}

#[test]
fn model_round_trip_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sqac");
    let model = Predictor::new(
        PredictorConfig::bilstm(4)
            .with_hidden(4)
            .with_layers(1)
            .with_feature_layer(3),
        1,
    )
    .unwrap();
    save_checkpoint(&model, &path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { sqa_model_load(cpath.as_ptr(), &mut handle) }, SqaStatus::Ok);
    let (mut d, mut s) = (0usize, 0usize);
    assert_eq!(unsafe { sqa_model_input_shape(handle, &mut d, &mut s) }, SqaStatus::Ok);
    assert_eq!((d, s), (4, 1));

    let frames: Vec<f32> = (0..20).map(|i| (i as f32 * 0.37).sin()).collect();
    let f = features(&frames, 5, 4);
    let mut mos = 0.0;
    let streams = [f as *const SqaFeatures];
    assert_eq!(
        unsafe { sqa_model_predict(handle, streams.as_ptr(), 1, &mut mos) },
        SqaStatus::Ok
    );
    let seq = sqa_core::features::FeatureSequence::embedding(frames.clone(), 5, 4, 3).unwrap();
    let reference = load_checkpoint(&path).unwrap();
    assert_eq!(mos, reference.predict_one(&[seq]).unwrap().mos);
    assert!(last_error().is_empty());

    let wrong = features(&frames, 4, 5);
    let streams = [wrong as *const SqaFeatures];
    assert_eq!(
        unsafe { sqa_model_predict(handle, streams.as_ptr(), 1, &mut mos) },
        SqaStatus::Shape
    );
    assert!(last_error().starts_with("shape"), "{}", last_error());

    unsafe {
        sqa_features_free(f);
        sqa_features_free(wrong);
        sqa_model_free(handle);
        sqa_model_free(ptr::null_mut());
    }
}

#[test]
fn load_errors_are_reported() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.sqac").unwrap();
    assert_eq!(unsafe { sqa_model_load(missing.as_ptr(), &mut handle) }, SqaStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("/nonexistent/model.sqac"));
    assert_eq!(
        unsafe { sqa_model_load(ptr::null(), &mut handle) },
        SqaStatus::NullPointer
    );

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.sqac");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let junk = CString::new(junk.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sqa_model_load(junk.as_ptr(), &mut handle) }, SqaStatus::Format);
}

#[test]
fn features_copy_and_read() {
    let frames = [1.0f32, -2.0, 3.5, 0.25, 0.0, 9.0];
    let f = features(&frames, 2, 3);
    let (mut t, mut d) = (0, 0);
    assert_eq!(unsafe { sqa_features_shape(f, &mut t, &mut d) }, SqaStatus::Ok);
    assert_eq!((t, d), (2, 3));
    let mut buf = [0f32; 6];
    assert_eq!(
        unsafe { sqa_features_copy(f, buf.as_mut_ptr(), 5) },
        SqaStatus::InvalidArgument
    );
    assert_eq!(unsafe { sqa_features_copy(f, buf.as_mut_ptr(), 6) }, SqaStatus::Ok);
    assert_eq!(buf, frames);
    unsafe { sqa_features_free(f) };

    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/sqaf/clip_layer21.sqaf");
    let c = CString::new(fixture.to_str().unwrap()).unwrap();
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { sqa_features_read(c.as_ptr(), &mut f) }, SqaStatus::Ok);
    assert_eq!(unsafe { sqa_features_shape(f, &mut t, &mut d) }, SqaStatus::Ok);
    assert_eq!((t, d), (7, 1024));
    unsafe { sqa_features_free(f) };

    let nan = [f32::NAN; 2];
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { sqa_features_from_frames(nan.as_ptr(), 1, 2, 0, &mut f) },
        SqaStatus::NonFinite
    );
    assert!(f.is_null());
}

#[test]
fn mfcc_through_the_abi() {
    let audio: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { sqa_features_extract_mfcc(audio.as_ptr(), audio.len(), 16000, &mut f) },
        SqaStatus::Ok
    );
    let (mut t, mut d) = (0, 0);
    unsafe { sqa_features_shape(f, &mut t, &mut d) };
    assert_eq!((t, d), (8000 / 200 + 1, 40));
    unsafe { sqa_features_free(f) };

    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { sqa_features_extract_mfcc(audio.as_ptr(), audio.len(), 8000, &mut f) },
        SqaStatus::Ok
    );
    unsafe { sqa_features_shape(f, &mut t, &mut d) };
    assert_eq!(t, 16000 / 200 + 1);
    unsafe { sqa_features_free(f) };
}

#[test]
fn agreement_helpers() {
    let counts = [3u32, 2];
    let stds = [1.0, 0.0];
    let (mut rmse, mut deq) = (0.0, -1.0);
    assert_eq!(
        unsafe { sqa_human_rmse(counts.as_ptr(), stds.as_ptr(), 2, 1.0, &mut rmse, &mut deq) },
        SqaStatus::Ok
    );
    assert!((rmse - 0.4f64.sqrt()).abs() < 1e-12);
    assert!(deq >= 0.0 && deq < rmse);
    assert_eq!(
        unsafe { sqa_human_rmse(counts.as_ptr(), stds.as_ptr(), 0, 0.0, &mut rmse, ptr::null_mut()) },
        SqaStatus::Empty
    );

    let mut out = 0.0;
    assert_eq!(
        unsafe { sqa_dequantize_human_rmse(0.6738, 1.0, &mut out) },
        SqaStatus::Ok
    );
    assert!((out - 0.6088).abs() < 5e-4);
    assert_eq!(
        unsafe { sqa_dequantize_human_rmse(-1.0, 1.0, &mut out) },
        SqaStatus::InvalidArgument
    );
    assert_eq!(unsafe { sqa_convert_iub(50.0, &mut out) }, SqaStatus::Ok);
    assert_eq!(out, 3.0);
    assert_eq!(unsafe { sqa_convert_iub(101.0, &mut out) }, SqaStatus::InvalidArgument);
    assert_eq!(unsafe { sqa_convert_iub(1.0, ptr::null_mut()) }, SqaStatus::NullPointer);
    let v = unsafe { CStr::from_ptr(sqa_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("sqa.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "sqa_model_load",
        "sqa_model_predict",
        "sqa_features_free",
        "SQA_STATUS_OK",
        "typedef struct SqaModel SqaModel",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(o) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
        else {
            eprintln!("{compiler} not found; skipping");
            continue;
        };
        assert!(o.status.success(), "{compiler}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
