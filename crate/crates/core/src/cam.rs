//! Class activation maps and event decoding.
//!
//! `M_c = Σ_k w[c,k] · F_k` is computed in score space (before the
//! sigmoid). Each map is collapsed to a time sequence by taking the maximum
//! over the feature axis, thresholded with the per-class frame threshold,
//! median filtered, and cut into events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::densenet::ForwardOutput;
use crate::labels::{ClassId, EventInterval, WeakLabelSet};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CamError {
    #[error("classifier has {weights} weights per class but feature map has {channels} channels")]
    ChannelMismatch { weights: usize, channels: usize },
    #[error("class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: ClassId, n_classes: usize },
    #[error("median filter length must be odd and >= 1, got {0}")]
    InvalidMedianLength(usize),
    #[error("utterance threshold must lie in (0, 1), got {0}")]
    InvalidUtteranceThreshold(f32),
    #[error("thresholds cover {got} classes, model has {expected}")]
    ThresholdCount { expected: usize, got: usize },
    #[error("empty activation map")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassActivationMap {
    pub class: ClassId,
    /// Row-major `T' × N'`.
    pub map: Vec<f32>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub time_resolution_s: f64,
}

impl ClassActivationMap {
    pub fn mean(&self) -> f64 {
        self.map.iter().map(|&v| v as f64).sum::<f64>() / self.map.len() as f64
    }
}

/// Weighted channel sum of a channel-major `K × T' × N'` feature map.
pub fn compute_cam(
    feature_map: &[f32],
    dims: (usize, usize, usize),
    class_weights: &[f32],
    class: ClassId,
    time_resolution_s: f64,
) -> Result<ClassActivationMap, CamError> {
    let (k, t, n) = dims;
    if class_weights.len() != k || feature_map.len() != k * t * n {
        return Err(CamError::ChannelMismatch {
            weights: class_weights.len(),
            channels: feature_map.len().checked_div(t * n).unwrap_or(0),
        });
    }
    let plane = t * n;
    let mut acc = vec![0.0f64; plane];
    for (ch, &w) in class_weights.iter().enumerate() {
        let w = w as f64;
        for (a, &f) in acc
            .iter_mut()
            .zip(&feature_map[ch * plane..(ch + 1) * plane])
        {
            *a += w * f as f64;
        }
    }
    Ok(ClassActivationMap {
        class,
        map: acc.into_iter().map(|v| v as f32).collect(),
        n_frames: t,
        n_bins: n,
        time_resolution_s,
    })
}

/// CAM of `class` for clip `b` of a forward pass.
pub fn clip_cam(
    output: &ForwardOutput,
    b: usize,
    classifier: &Tensor<f32>,
    class: ClassId,
    time_resolution_s: f64,
) -> Result<ClassActivationMap, CamError> {
    let (n_classes, k) = (classifier.shape()[0], classifier.shape()[1]);
    if class >= n_classes {
        return Err(CamError::ClassOutOfRange { class, n_classes });
    }
    let (t, n) = output.spatial();
    if k != output.channels() {
        return Err(CamError::ChannelMismatch {
            weights: k,
            channels: output.channels(),
        });
    }
    compute_cam(
        output.clip_feature_map(b),
        (k, t, n),
        &classifier.data()[class * k..(class + 1) * k],
        class,
        time_resolution_s,
    )
}

/// `out[t] = max_n M[t, n]`.
pub fn cam_to_sequence(cam: &ClassActivationMap) -> Vec<f32> {
    cam.map
        .chunks(cam.n_bins.max(1))
        .map(|row| row.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect()
}

/// Per-class CAM sequences for clip `b`.
pub fn clip_sequences(
    output: &ForwardOutput,
    b: usize,
    classifier: &Tensor<f32>,
) -> Result<Vec<Vec<f32>>, CamError> {
    (0..classifier.shape()[0])
        .map(|c| clip_cam(output, b, classifier, c, 1.0).map(|m| cam_to_sequence(&m)))
        .collect()
}

/// `seq[t] >= threshold`.
pub fn binarize(seq: &[f32], threshold: f32) -> Vec<bool> {
    seq.iter().map(|&v| v >= threshold).collect()
}

/// Sliding median of a binary mask with edge replication.
pub fn median_filter(mask: &[bool], len: usize) -> Result<Vec<bool>, CamError> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(CamError::InvalidMedianLength(len));
    }
    if len == 1 || mask.is_empty() {
        return Ok(mask.to_vec());
    }
    let half = len / 2;
    let last = mask.len() - 1;
    Ok((0..mask.len())
        .map(|i| {
            let ones = (0..len)
                .filter(|&j| {
                    let idx = (i + j).saturating_sub(half).min(last);
                    mask[idx]
                })
                .count();
            ones > half
        })
        .collect())
}

/// Maximal runs of a mask as `[start, end]` inclusive frame pairs.
pub fn mask_runs(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &on) in mask.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push((s, mask.len() - 1));
    }
    runs
}

/// Thresholds a CAM sequence, median filters the mask, and emits one event
/// per maximal active run.
pub fn decode_events(
    seq: &[f32],
    class: ClassId,
    frame_threshold: f32,
    median_len: usize,
    time_resolution_s: f64,
) -> Result<Vec<EventInterval>, CamError> {
    let mask = median_filter(&binarize(seq, frame_threshold), median_len)?;
    Ok(mask_runs(&mask)
        .into_iter()
        .map(|(i, j)| {
            EventInterval::new(
                class,
                i as f64 * time_resolution_s,
                (j + 1) as f64 * time_resolution_s,
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThreshold {
    /// Tag iff `y_c > utterance`.
    pub utterance: f32,
    /// Frame active iff CAM sequence `>= frame` (score space).
    pub frame: f32,
    pub median_len: usize,
}

impl Default for ClassThreshold {
    fn default() -> Self {
        ClassThreshold {
            utterance: 0.5,
            frame: 0.0,
            median_len: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub classes: Vec<ClassThreshold>,
}

impl ThresholdSet {
    pub fn uniform(n_classes: usize, t: ClassThreshold) -> Self {
        ThresholdSet {
            classes: vec![t; n_classes],
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<(), CamError> {
        if self.classes.len() != n_classes {
            return Err(CamError::ThresholdCount {
                expected: n_classes,
                got: self.classes.len(),
            });
        }
        for t in &self.classes {
            if !(t.utterance > 0.0 && t.utterance < 1.0) {
                return Err(CamError::InvalidUtteranceThreshold(t.utterance));
            }
            if t.median_len == 0 || t.median_len % 2 == 0 {
                return Err(CamError::InvalidMedianLength(t.median_len));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipPrediction {
    pub tags: WeakLabelSet,
    pub events: Vec<EventInterval>,
}

/// Tags from utterance probabilities and events from per-class CAM
/// sequences; only tagged classes are localized.
pub fn predict_from_parts(
    probs: &[f32],
    sequences: &[Vec<f32>],
    thresholds: &ThresholdSet,
    time_resolution_s: f64,
) -> Result<ClipPrediction, CamError> {
    thresholds.validate(probs.len())?;
    let mut pred = ClipPrediction::default();
    for (c, (&p, t)) in probs.iter().zip(&thresholds.classes).enumerate() {
        if p > t.utterance {
            pred.tags.insert(c);
            pred.events.extend(decode_events(
                &sequences[c],
                c,
                t.frame,
                t.median_len,
                time_resolution_s,
            )?);
        }
    }
    pred.events
        .sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));
    Ok(pred)
}

pub fn predict(
    output: &ForwardOutput,
    b: usize,
    classifier: &Tensor<f32>,
    thresholds: &ThresholdSet,
    time_resolution_s: f64,
) -> Result<ClipPrediction, CamError> {
    let seqs = clip_sequences(output, b, classifier)?;
    predict_from_parts(output.clip_probs(b), &seqs, thresholds, time_resolution_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam(map: Vec<f32>, t: usize, n: usize) -> ClassActivationMap {
        ClassActivationMap {
            class: 0,
            map,
            n_frames: t,
            n_bins: n,
            time_resolution_s: 0.16,
        }
    }

    #[test]
    fn two_channel_difference() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [0.5f32, -1.0, 7.0, 0.0];
        let fm: Vec<f32> = a.iter().chain(&b).copied().collect();
        let m = compute_cam(&fm, (2, 2, 2), &[1.0, -1.0], 0, 0.1).unwrap();
        let expect: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert_eq!(m.map, expect);
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let fm: Vec<f32> = (0..3 * 4 * 5).map(|i| i as f32).collect();
        let m = compute_cam(&fm, (3, 4, 5), &[0.0; 3], 0, 0.1).unwrap();
        assert!(m.map.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch() {
        let fm = vec![0.0f32; 2 * 3 * 3];
        assert!(matches!(
            compute_cam(&fm, (2, 3, 3), &[1.0; 3], 0, 0.1),
            Err(CamError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn single_row_sequence() {
        let m = cam(vec![3.0, -1.0, 2.0], 3, 1);
        assert_eq!(cam_to_sequence(&m), vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn column_constant_map() {
        let row = [0.5f32, -2.0, 9.0, 1.0];
        // Every time step holds the same value across bins.
        let map: Vec<f32> = row.iter().flat_map(|&v| [v; 3]).collect();
        assert_eq!(cam_to_sequence(&cam(map, 4, 3)), row.to_vec());
    }

    #[test]
    fn median_filter_hand_example() {
        let mask = [false, true, false, true, true, true, false];
        let filtered = median_filter(&mask, 3).unwrap();
        assert_eq!(filtered, vec![false, false, true, true, true, true, false]);
        let seq: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let ev = decode_events(&seq, 0, 0.5, 3, 1.0).unwrap();
        assert_eq!(ev, vec![EventInterval::new(0, 2.0, 6.0)]);
    }

    #[test]
    fn below_threshold_is_empty() {
        let ev = decode_events(&[0.1, 0.2, 0.3], 0, 0.5, 1, 0.16).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn identity_filter_keeps_single_frames() {
        let ev = decode_events(&[1.0, 0.0, 1.0], 2, 0.5, 1, 0.16).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[0], EventInterval::new(2, 0.0, 0.16));
        assert!((ev[1].onset - 0.32).abs() < 1e-12);
    }

    #[test]
    fn frame_threshold_is_inclusive() {
        assert_eq!(binarize(&[0.5, 0.49], 0.5), vec![true, false]);
    }

    #[test]
    fn even_median_length_rejected() {
        assert_eq!(
            median_filter(&[true], 2).unwrap_err(),
            CamError::InvalidMedianLength(2)
        );
        assert!(median_filter(&[true], 0).is_err());
    }

    #[test]
    fn zero_probabilities_give_nothing() {
        let th = ThresholdSet::uniform(3, ClassThreshold::default());
        let seqs = vec![vec![10.0; 5]; 3];
        let p = predict_from_parts(&[0.0; 3], &seqs, &th, 0.16).unwrap();
        assert!(p.tags.is_empty() && p.events.is_empty());
    }

    #[test]
    fn tag_without_events_when_sequence_is_quiet() {
        let th = ThresholdSet::uniform(
            2,
            ClassThreshold {
                utterance: 0.5,
                frame: 5.0,
                median_len: 1,
            },
        );
        let seqs = vec![vec![1.0; 4], vec![1.0; 4]];
        let p = predict_from_parts(&[0.9, 0.1], &seqs, &th, 0.16).unwrap();
        assert_eq!(p.tags.iter().copied().collect::<Vec<_>>(), vec![0]);
        assert!(p.events.is_empty());
    }

    #[test]
    fn utterance_threshold_is_strict() {
        let th = ThresholdSet::uniform(1, ClassThreshold::default());
        let p = predict_from_parts(&[0.5], &[vec![1.0]], &th, 0.16).unwrap();
        assert!(p.tags.is_empty());
    }

    #[test]
    fn threshold_validation() {
        let mut th = ThresholdSet::uniform(2, ClassThreshold::default());
        assert!(th.validate(3).is_err());
        th.classes[1].utterance = 1.0;
        assert!(th.validate(2).is_err());
    }

    #[test]
    fn time_resolution_per_arch() {
        use crate::densenet::ArchSpec;
        assert!((ArchSpec::densenet63(17).time_resolution_s(0.01) - 0.16).abs() < 1e-12);
        assert!((ArchSpec::densenet120(10).time_resolution_s(0.01) - 0.08).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sequence_matches_bruteforce(t in 1usize..12, n in 1usize..9, seed in 0u32..10_000) {
            let map: Vec<f32> = (0..t * n)
                .map(|i| ((i as u32).wrapping_mul(2_654_435_761).wrapping_add(seed) % 1000) as f32 - 500.0)
                .collect();
            let seq = cam_to_sequence(&cam(map.clone(), t, n));
            for ti in 0..t {
                let mut best = map[ti * n];
                for ni in 1..n {
                    if map[ti * n + ni] > best {
                        best = map[ti * n + ni];
                    }
                }
                prop_assert_eq!(seq[ti], best);
            }
        }

        #[test]
        fn decoded_events_are_sorted_disjoint_and_long_enough(
            seq in proptest::collection::vec(-2.0f32..2.0, 1..60),
            th in -1.0f32..1.0,
            half in 0usize..5,
        ) {
            let res = 0.16;
            let ev = decode_events(&seq, 0, th, 2 * half + 1, res).unwrap();
            for e in &ev {
                prop_assert!(e.duration() >= res - 1e-9);
                prop_assert!(e.onset >= 0.0);
            }
            for w in ev.windows(2) {
                prop_assert!(w[0].offset < w[1].onset);
            }
        }

        #[test]
        fn raising_frame_threshold_never_adds_activity(
            seq in proptest::collection::vec(-2.0f32..2.0, 1..60),
            lo in -1.0f32..1.0,
            delta in 0.0f32..1.0,
        ) {
            let a = binarize(&seq, lo);
            let b = binarize(&seq, lo + delta);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(!*y || *x);
            }
        }
    }
}
