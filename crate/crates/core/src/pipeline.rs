//! Glue between corpus files, features and models: loading featurized
//! clips and batched inference.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cam::{
    clip_sequences, predict_from_parts, ClassThreshold, ClipPrediction, ThresholdSet,
};
use crate::corpus::{load_manifest, read_wav, ClipRecord};
use crate::densenet::{stack_spectrograms, DenseNet, Mode};
use crate::error::{Error, Result};
use crate::features::{lfbe, AudioClip, FeatureConfig, Spectrogram, DEFAULT_MAX_DURATION_S};
use crate::labels::{ClassVocab, EventInterval, WeakLabelSet};
use crate::metrics::{Counts, DevClip, TuneObjective};
use crate::tensor::Tensor;

/// A manifest record with its features.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub record: ClipRecord,
    pub spec: Spectrogram,
    pub duration_s: f64,
}

pub fn featurize(audio: &AudioClip, features: &FeatureConfig) -> Result<Spectrogram> {
    audio.check_duration(DEFAULT_MAX_DURATION_S)?;
    Ok(lfbe(audio, features)?)
}

pub fn load_clip(
    record: ClipRecord,
    manifest_dir: &Path,
    features: &FeatureConfig,
) -> Result<Clip> {
    let audio = read_wav(&record.audio_path(manifest_dir))?;
    let spec = featurize(&audio, features).map_err(|e| Error::Clip {
        id: record.id.clone(),
        msg: e.to_string(),
    })?;
    Ok(Clip {
        duration_s: audio.duration_s(),
        record,
        spec,
    })
}

/// Reads a manifest and featurizes every clip in it.
pub fn load_clips(
    manifest: &Path,
    vocab: &ClassVocab,
    features: &FeatureConfig,
) -> Result<Vec<Clip>> {
    let records = load_manifest(manifest, vocab)?;
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    records
        .into_iter()
        .map(|r| load_clip(r, dir, features))
        .collect()
}

pub fn multi_hot(labels: &WeakLabelSet, n_classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; n_classes];
    for &c in labels {
        v[c] = 1.0;
    }
    v
}

pub fn targets_tensor(labels: &[&WeakLabelSet], n_classes: usize) -> Tensor<f32> {
    let data = labels
        .iter()
        .flat_map(|l| multi_hot(l, n_classes))
        .collect();
    Tensor::new(vec![labels.len(), n_classes], data).expect("sized")
}

/// Model outputs for one clip: class probabilities and per-class CAM
/// sequences (score space, one value per output frame).
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInference {
    pub probs: Vec<f32>,
    pub sequences: Vec<Vec<f32>>,
}

/// Eval-mode inference in batches of `batch_size`.
pub fn infer(
    model: &DenseNet,
    specs: &[&Spectrogram],
    batch_size: usize,
) -> Result<Vec<ClipInference>> {
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch_size.max(1)) {
        let input = stack_spectrograms(chunk)?;
        let fwd = model.forward(&input, Mode::Eval)?;
        for b in 0..chunk.len() {
            out.push(ClipInference {
                probs: fwd.clip_probs(b).to_vec(),
                sequences: clip_sequences(&fwd, b, model.weights.classifier())?,
            });
        }
    }
    Ok(out)
}

/// Probabilities only, skipping CAM extraction.
pub fn infer_probs(
    model: &DenseNet,
    specs: &[&Spectrogram],
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch_size.max(1)) {
        let fwd = model.forward(&stack_spectrograms(chunk)?, Mode::Eval)?;
        out.extend((0..chunk.len()).map(|b| fwd.clip_probs(b).to_vec()));
    }
    Ok(out)
}

/// Tags from probabilities with a strict `p > threshold` rule.
pub fn tags(probs: &[f32], threshold: f32) -> WeakLabelSet {
    (0..probs.len()).filter(|&c| probs[c] > threshold).collect()
}

/// Micro-averaged tagging F1 at a single threshold.
pub fn tagging_f1(probs: &[Vec<f32>], labels: &[&WeakLabelSet], threshold: f32) -> f64 {
    let mut counts = Counts::default();
    for (p, r) in probs.iter().zip(labels) {
        let pred = tags(p, threshold);
        counts.tp += pred.intersection(r).count() as u64;
        counts.fp += pred.difference(r).count() as u64;
        counts.fn_ += r.difference(&pred).count() as u64;
    }
    counts.f1()
}

/// Pairs clips with their inference results for threshold tuning.
pub fn dev_clips(clips: &[Clip], inferences: Vec<ClipInference>) -> Vec<DevClip> {
    clips
        .iter()
        .zip(inferences)
        .map(|(c, inf)| DevClip {
            id: c.record.id.clone(),
            duration_s: c.duration_s,
            probs: inf.probs,
            sequences: inf.sequences,
            weak: c.record.weak.clone(),
            strong: c.record.strong.clone(),
        })
        .collect()
}

/// Tags and localized events, with events clipped to `[0, duration_s]`.
pub fn predict_clip(
    inference: &ClipInference,
    thresholds: &ThresholdSet,
    time_resolution_s: f64,
    duration_s: f64,
) -> Result<ClipPrediction> {
    let mut pred = predict_from_parts(
        &inference.probs,
        &inference.sequences,
        thresholds,
        time_resolution_s,
    )?;
    pred.events = pred
        .events
        .into_iter()
        .filter_map(|e| {
            let e = EventInterval::new(e.class, e.onset.max(0.0), e.offset.min(duration_s));
            e.is_valid().then_some(e)
        })
        .collect();
    Ok(pred)
}

/// Tuned thresholds with the class names they were tuned for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub classes: Vec<String>,
    pub objective: TuneObjective,
    pub thresholds: Vec<ClassThreshold>,
}

impl ThresholdFile {
    pub fn new(vocab: &ClassVocab, objective: TuneObjective, set: &ThresholdSet) -> Self {
        ThresholdFile {
            classes: vocab.names().to_vec(),
            objective,
            thresholds: set.classes.clone(),
        }
    }

    /// The thresholds, checked against the model's vocabulary.
    pub fn for_vocab(&self, vocab: &ClassVocab) -> Result<ThresholdSet> {
        if self.classes != vocab.names() {
            return Err(Error::Invalid(format!(
                "thresholds were tuned for classes {:?}, model has {:?}",
                self.classes,
                vocab.names()
            )));
        }
        let set = ThresholdSet {
            classes: self.thresholds.clone(),
        };
        set.validate(vocab.len())?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("thresholds serialize");
        std::fs::write(path, text + "\n")
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densenet::ArchSpec;

    #[test]
    fn multi_hot_and_tags() {
        let l: WeakLabelSet = [0, 2].into();
        assert_eq!(multi_hot(&l, 3), vec![1.0, 0.0, 1.0]);
        assert_eq!(tags(&[0.5, 0.51, 0.9], 0.5), [1, 2].into());
    }

    #[test]
    fn threshold_file_checks_vocab() {
        let v = ClassVocab::new(vec!["a".into(), "b".into()]).unwrap();
        let set = ThresholdSet::uniform(2, ClassThreshold::default());
        let f = ThresholdFile::new(&v, TuneObjective::Segment, &set);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        f.save(&p).unwrap();
        let back = ThresholdFile::load(&p).unwrap();
        assert_eq!(back.for_vocab(&v).unwrap(), set);
        let other = ClassVocab::new(vec!["a".into(), "c".into()]).unwrap();
        assert!(back.for_vocab(&other).is_err());
    }

    #[test]
    fn predicted_events_clamped_to_duration() {
        let inf = ClipInference {
            probs: vec![0.9],
            sequences: vec![vec![0.0, 1.0, 1.0, 1.0]],
        };
        let th = ThresholdSet::uniform(
            1,
            ClassThreshold {
                utterance: 0.5,
                frame: 0.5,
                median_len: 1,
            },
        );
        let p = predict_clip(&inf, &th, 0.16, 0.5).unwrap();
        assert_eq!(p.events, vec![EventInterval::new(0, 0.16, 0.5)]);
        let p = predict_clip(&inf, &th, 0.16, 0.1).unwrap();
        assert!(p.events.is_empty());
        assert_eq!(p.tags, [0].into());
    }

    #[test]
    fn tagging_f1_counts() {
        let a: WeakLabelSet = [0].into();
        let b: WeakLabelSet = [1].into();
        let f = tagging_f1(&[vec![0.9, 0.9], vec![0.1, 0.1]], &[&a, &b], 0.5);
        // tp 1, fp 1, fn 1
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn batched_inference_matches_single() {
        let spec = ArchSpec {
            n_mels: 16,
            ..ArchSpec::densenet63(3).scaled(2, vec![1, 1, 1, 1])
        };
        let model = DenseNet::build(spec, 3).unwrap();
        let specs: Vec<Spectrogram> = (0..3)
            .map(|i| Spectrogram {
                frames: (0..40 * 16)
                    .map(|j| ((i * 7 + j) % 13) as f32 * 0.1)
                    .collect(),
                n_frames: 40,
                n_mels: 16,
                frame_shift_s: 0.01,
            })
            .collect();
        let refs: Vec<&Spectrogram> = specs.iter().collect();
        let batched = infer(&model, &refs, 2).unwrap();
        for (s, b) in refs.iter().zip(&batched) {
            let single = infer(&model, &[s], 1).unwrap();
            for (x, y) in single[0].probs.iter().zip(&b.probs) {
                assert!((x - y).abs() < 1e-5);
            }
            assert_eq!(b.sequences.len(), 3);
        }
        let probs = infer_probs(&model, &refs, 3).unwrap();
        assert_eq!(probs.len(), 3);
    }
}
