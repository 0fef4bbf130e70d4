use std::ffi::{CStr, CString};
use std::ptr;

use densecam::cam::{ClassThreshold, ThresholdSet};
use densecam::corpus::{save_weights, TrainingMeta, WeightsFile};
use densecam::densenet::{ArchSpec, DenseNet};
use densecam::features::{AudioClip, FeatureConfig};
use densecam::labels::ClassVocab;
use densecam::pipeline::{featurize, infer, predict_clip};
use densecam_ffi::*;

const SR: u32 = 8000;

fn weights() -> WeightsFile {
    let spec = ArchSpec {
        n_mels: 16,
        ..ArchSpec::densenet63(3).scaled(2, vec![1, 1, 1, 1])
    };
    let model = DenseNet::build(spec, 7).unwrap();
    let vocab = ClassVocab::new(vec!["dog".into(), "siren".into(), "speech".into()]).unwrap();
    let features = FeatureConfig {
        n_mels: 16,
        ..FeatureConfig::default()
    };
    let meta = TrainingMeta {
        seed: 7,
        epochs: 0,
        config_hash: String::new(),
        extra: Default::default(),
    };
    WeightsFile::from_model(&model, &vocab, features, meta)
}

fn pcm(seconds: f64) -> Vec<f32> {
    let n = (seconds * SR as f64) as usize;
    (0..n)
        .map(|i| 0.3 * (i as f32 * 0.07).sin() + 0.1 * ((i * 7919) % 101) as f32 / 101.0)
        .collect()
}

fn load_model(file: &WeightsFile) -> *mut DcModel {
    let bytes = file.to_bytes();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { dc_model_load_bytes(bytes.as_ptr(), bytes.len(), &mut m) },
        DcStatus::Ok
    );
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dc_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn load_from_path_and_query_classes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_weights(&path, &weights()).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(dc_model_load(c_path.as_ptr(), &mut m), DcStatus::Ok);
        assert_eq!(dc_model_num_classes(m), 3);
        let names: Vec<_> = (0..3)
            .map(|c| {
                CStr::from_ptr(dc_model_class_name(m, c))
                    .to_str()
                    .unwrap()
                    .to_owned()
            })
            .collect();
        assert_eq!(names, ["dog", "siren", "speech"]);
        assert!(dc_model_class_name(m, 3).is_null());
        assert_eq!(dc_model_min_frames(m), 16);
        dc_model_free(m);
    }
}

#[test]
fn run_matches_library_inference() {
    let file = weights();
    let samples = pcm(1.0);
    let audio = AudioClip::new(samples.clone(), SR).unwrap();
    let spec = featurize(&audio, &file.features).unwrap();
    let model = file.model().unwrap();
    let expected = infer(&model, &[&spec], 1).unwrap().remove(0);

    let m = load_model(&file);
    let mut clip = ptr::null_mut();
    unsafe {
        assert_eq!(
            dc_model_run(m, samples.as_ptr(), samples.len(), SR, &mut clip),
            DcStatus::Ok
        );
        let mut probs = [0f32; 3];
        assert_eq!(dc_clip_probs(clip, probs.as_mut_ptr(), 3), DcStatus::Ok);
        assert_eq!(probs.to_vec(), expected.probs);

        let t = dc_clip_num_frames(clip);
        assert_eq!(t, expected.sequences[0].len());
        let mut seq = vec![0f32; t];
        for c in 0..3 {
            assert_eq!(dc_clip_sequence(clip, c, seq.as_mut_ptr(), t), DcStatus::Ok);
            assert_eq!(seq, expected.sequences[c]);
        }
        let res = dc_clip_time_resolution(clip);
        assert!((res - model.time_resolution_s(spec.frame_shift_s)).abs() < 1e-12);

        // Low thresholds so every class yields events.
        let th = [DcThreshold {
            utterance: 0.01,
            frame: -1e9,
            median_len: 1,
        }; 3];
        let mut n = 0usize;
        assert_eq!(
            dc_clip_events(clip, th.as_ptr(), 3, ptr::null_mut(), 0, &mut n),
            DcStatus::BufferTooSmall
        );
        let mut events = vec![DcEvent::default(); n];
        assert_eq!(
            dc_clip_events(clip, th.as_ptr(), 3, events.as_mut_ptr(), n, &mut n),
            DcStatus::Ok
        );

        let set = ThresholdSet::uniform(
            3,
            ClassThreshold {
                utterance: 0.01,
                frame: -1e9,
                median_len: 1,
            },
        );
        let want = predict_clip(&expected, &set, res, audio.duration_s()).unwrap();
        assert_eq!(events.len(), want.events.len());
        for (got, e) in events.iter().zip(&want.events) {
            assert_eq!(got.class_id as usize, e.class);
            assert_eq!((got.onset, got.offset), (e.onset, e.offset));
            assert!(got.offset <= 1.0);
        }

        dc_clip_free(clip);
        dc_model_free(m);
    }
}

#[test]
fn error_codes() {
    let m = load_model(&weights());
    let mut clip = ptr::null_mut();
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(dc_model_load(ptr::null(), &mut out), DcStatus::NullPointer);
        assert!(last_error().contains("path"));

        let missing = CString::new("/nonexistent/model.bin").unwrap();
        assert_eq!(dc_model_load(missing.as_ptr(), &mut out), DcStatus::Io);

        let junk = b"not a weights file at all";
        assert_eq!(
            dc_model_load_bytes(junk.as_ptr(), junk.len(), &mut out),
            DcStatus::Format
        );
        assert!(out.is_null());

        let short = pcm(0.05);
        assert_eq!(
            dc_model_run(m, short.as_ptr(), short.len(), SR, &mut clip),
            DcStatus::InputLength
        );
        let long = pcm(10.5);
        assert_eq!(
            dc_model_run(m, long.as_ptr(), long.len(), SR, &mut clip),
            DcStatus::InputLength
        );
        let ok = pcm(0.5);
        assert_eq!(
            dc_model_run(m, ok.as_ptr(), ok.len(), 0, &mut clip),
            DcStatus::InvalidArgument
        );
        assert_eq!(
            dc_model_run(m, ok.as_ptr(), ok.len(), SR, &mut clip),
            DcStatus::Ok
        );

        let mut probs = [0f32; 2];
        assert_eq!(
            dc_clip_probs(clip, probs.as_mut_ptr(), 2),
            DcStatus::BufferTooSmall
        );
        assert_eq!(
            dc_clip_sequence(clip, 9, probs.as_mut_ptr(), 2),
            DcStatus::InvalidArgument
        );

        let even = [DcThreshold {
            utterance: 0.5,
            frame: 0.0,
            median_len: 2,
        }; 3];
        let mut n = 0usize;
        assert_eq!(
            dc_clip_events(clip, even.as_ptr(), 3, ptr::null_mut(), 0, &mut n),
            DcStatus::InvalidArgument
        );
        assert_eq!(
            dc_clip_events(clip, even.as_ptr(), 2, ptr::null_mut(), 0, &mut n),
            DcStatus::InvalidArgument
        );
        assert!(!last_error().is_empty());

        assert_eq!(dc_model_num_classes(ptr::null()), 0);
        dc_clip_free(clip);
        dc_clip_free(ptr::null_mut());
        dc_model_free(m);
        dc_model_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/densecam.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in [
        "dc_model_load",
        "dc_model_run",
        "dc_clip_events",
        "dc_last_error",
        "DC_STATUS_OK",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", header])
        .status()
    else {
        return;
    };
    assert!(status.success());
}
