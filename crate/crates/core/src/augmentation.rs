//! Training-set expansion by circular shifts and pairwise mixing.
//!
//! Planning works on manifest records alone so large corpora can be planned
//! cheaply; [`render_derived`] later produces the audio for one derived
//! record from its sources.

use rand::Rng;
use thiserror::Error;

use crate::corpus::{ClipRecord, Provenance};
use crate::features::AudioClip;
use crate::rng::{rng_for, STREAM_AUGMENT};

pub const MIX_GAIN_RANGE: (f32, f32) = (0.5, 1.0);

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("cannot mix clips at {0} Hz and {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("target count {target} is below the current count {current}")]
    TargetBelowCount { target: usize, current: usize },
    #[error("no original clips to derive from")]
    NoSources,
    #[error("{0} lengths given for {1} records")]
    LengthCount(usize, usize),
    #[error("derived id `{0}` already exists")]
    IdClash(String),
    #[error("record `{0}` is not a derived clip")]
    NotDerived(String),
    #[error("shift of {shift} samples out of range for a {len}-sample clip")]
    ShiftOutOfRange { shift: usize, len: usize },
    #[error("source audio: {0}")]
    Source(String),
}

/// `out[i] = in[(i + shift) mod n]`.
pub fn circular_shift(clip: &AudioClip, shift: usize) -> AudioClip {
    let mut samples = clip.samples.clone();
    let n = samples.len();
    if n > 0 {
        samples.rotate_left(shift % n);
    }
    AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    }
}

/// `gain_a·a + gain_b·b`, zero-padding the shorter clip and scaling the
/// result down to unit peak only when it would clip.
pub fn mix_clips(
    a: &AudioClip,
    b: &AudioClip,
    gain_a: f32,
    gain_b: f32,
) -> Result<AudioClip, AugmentError> {
    if a.sample_rate != b.sample_rate {
        return Err(AugmentError::SampleRateMismatch(
            a.sample_rate,
            b.sample_rate,
        ));
    }
    let n = a.samples.len().max(b.samples.len());
    let at = |s: &[f32], i: usize| s.get(i).copied().unwrap_or(0.0);
    let mut out: Vec<f32> = (0..n)
        .map(|i| gain_a * at(&a.samples, i) + gain_b * at(&b.samples, i))
        .collect();
    let peak = out.iter().fold(0f32, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(AudioClip {
        samples: out,
        sample_rate: a.sample_rate,
    })
}

/// Appends derived records until the corpus holds `target` records.
///
/// Derived record `k` (counting from zero across the whole corpus) is a
/// shift when `k` is even and a mix otherwise, drawn from an RNG seeded by
/// `(seed, k)`. Only records without provenance are used as sources, and a
/// corpus with fewer than two of them gets shifts only. `lengths[i]` is the
/// sample count of `records[i]`.
pub fn augment_corpus(
    records: &[ClipRecord],
    lengths: &[usize],
    target: usize,
    seed: u64,
) -> Result<Vec<ClipRecord>, AugmentError> {
    if lengths.len() != records.len() {
        return Err(AugmentError::LengthCount(lengths.len(), records.len()));
    }
    if target < records.len() {
        return Err(AugmentError::TargetBelowCount {
            target,
            current: records.len(),
        });
    }
    let originals: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].derived_from.is_none())
        .collect();
    if originals.is_empty() && target > records.len() {
        return Err(AugmentError::NoSources);
    }
    let mut ids: std::collections::BTreeSet<String> =
        records.iter().map(|r| r.id.clone()).collect();
    let already_derived = records.len() - originals.len();
    let mut out = records.to_vec();
    for k in already_derived..already_derived + (target - records.len()) {
        let mut rng = rng_for(seed, STREAM_AUGMENT, k as u64);
        let id = format!("aug{k:05}");
        if !ids.insert(id.clone()) {
            return Err(AugmentError::IdClash(id));
        }
        let derived = if k % 2 == 1 && originals.len() >= 2 {
            let i = rng.gen_range(0..originals.len());
            let mut j = rng.gen_range(0..originals.len() - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = (originals[i], originals[j]);
            let gains = [
                rng.gen_range(MIX_GAIN_RANGE.0..=MIX_GAIN_RANGE.1),
                rng.gen_range(MIX_GAIN_RANGE.0..=MIX_GAIN_RANGE.1),
            ];
            let (ra, rb) = (&records[a], &records[b]);
            ClipRecord {
                id: id.clone(),
                path: format!("augmented/{id}.wav").into(),
                weak: ra.weak.union(&rb.weak).copied().collect(),
                strong: None,
                split: ra.split,
                derived_from: Some(Provenance::Mix {
                    sources: [ra.id.clone(), rb.id.clone()],
                    gains,
                }),
            }
        } else {
            let s = originals[rng.gen_range(0..originals.len())];
            let shift = rng.gen_range(0..lengths[s].max(1));
            let src = &records[s];
            ClipRecord {
                id: id.clone(),
                path: format!("augmented/{id}.wav").into(),
                weak: src.weak.clone(),
                strong: None,
                split: src.split,
                derived_from: Some(Provenance::Shift {
                    source: src.id.clone(),
                    samples: shift,
                }),
            }
        };
        out.push(derived);
    }
    Ok(out)
}

/// Produces the audio for a derived record, fetching sources by id.
pub fn render_derived<F>(record: &ClipRecord, mut source: F) -> Result<AudioClip, AugmentError>
where
    F: FnMut(&str) -> Result<AudioClip, String>,
{
    let fetch = |s: &mut F, id: &str| s(id).map_err(AugmentError::Source);
    match &record.derived_from {
        None => Err(AugmentError::NotDerived(record.id.clone())),
        Some(Provenance::Shift {
            source: id,
            samples,
        }) => {
            let clip = fetch(&mut source, id)?;
            if *samples >= clip.samples.len().max(1) {
                return Err(AugmentError::ShiftOutOfRange {
                    shift: *samples,
                    len: clip.samples.len(),
                });
            }
            Ok(circular_shift(&clip, *samples))
        }
        Some(Provenance::Mix { sources, gains }) => {
            let a = fetch(&mut source, &sources[0])?;
            let b = fetch(&mut source, &sources[1])?;
            mix_clips(&a, &b, gains[0], gains[1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use proptest::prelude::*;

    fn clip(v: Vec<f32>) -> AudioClip {
        AudioClip::new(v, 8000).unwrap()
    }

    fn rec(id: &str, weak: &[usize]) -> ClipRecord {
        ClipRecord {
            id: id.into(),
            path: format!("{id}.wav").into(),
            weak: weak.iter().copied().collect(),
            strong: None,
            split: Split::Train,
            derived_from: None,
        }
    }

    #[test]
    fn shift_zero_is_identity() {
        let c = clip(vec![0.1, 0.2, 0.3]);
        assert_eq!(circular_shift(&c, 0), c);
        assert_eq!(circular_shift(&c, 1).samples, vec![0.2, 0.3, 0.1]);
    }

    #[test]
    fn mix_with_silence_is_identity() {
        let a = clip(vec![0.5, -0.25, 0.125]);
        let s = clip(vec![0.0; 3]);
        assert_eq!(mix_clips(&a, &s, 1.0, 1.0).unwrap(), a);
    }

    #[test]
    fn mix_pads_and_normalizes() {
        let a = clip(vec![0.9, 0.9, 0.9, 0.2]);
        let b = clip(vec![0.9]);
        let m = mix_clips(&a, &b, 1.0, 1.0).unwrap();
        assert_eq!(m.samples.len(), 4);
        assert_eq!(m.samples[0], 1.0);
        assert!((m.samples[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn mix_rate_mismatch() {
        let a = clip(vec![0.0]);
        let b = AudioClip::new(vec![0.0], 16000).unwrap();
        assert_eq!(
            mix_clips(&a, &b, 1.0, 1.0),
            Err(AugmentError::SampleRateMismatch(8000, 16000))
        );
    }

    #[test]
    fn target_equal_to_count_is_noop() {
        let recs = vec![rec("a", &[0]), rec("b", &[1])];
        assert_eq!(augment_corpus(&recs, &[10, 10], 2, 1).unwrap(), recs);
        assert!(augment_corpus(&recs, &[10, 10], 1, 1).is_err());
    }

    #[test]
    fn single_clip_falls_back_to_shifts() {
        let recs = vec![rec("a", &[0])];
        let out = augment_corpus(&recs, &[10], 5, 3).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out[1..]
            .iter()
            .all(|r| matches!(r.derived_from, Some(Provenance::Shift { .. }))));
    }

    #[test]
    fn labels_are_unions_and_originals_untouched() {
        let recs = vec![rec("a", &[0]), rec("b", &[1]), rec("c", &[1, 2])];
        let out = augment_corpus(&recs, &[100; 3], 40, 9).unwrap();
        assert_eq!(&out[..3], &recs[..]);
        let by_id = |id: &str| recs.iter().find(|r| r.id == id).unwrap();
        let (mut shifts, mut mixes) = (0, 0);
        for r in &out[3..] {
            let p = r.derived_from.as_ref().unwrap();
            let union: crate::labels::WeakLabelSet = p
                .sources()
                .iter()
                .flat_map(|s| by_id(s).weak.clone())
                .collect();
            assert_eq!(r.weak, union);
            match p {
                Provenance::Shift { samples, .. } => {
                    assert!(*samples < 100);
                    shifts += 1
                }
                Provenance::Mix { sources, gains } => {
                    assert_ne!(sources[0], sources[1]);
                    assert!(gains.iter().all(|g| (0.5..=1.0).contains(g)));
                    mixes += 1
                }
            }
        }
        assert_eq!((shifts, mixes), (19, 18));
    }

    #[test]
    fn appending_again_continues_the_sequence() {
        let recs = vec![rec("a", &[0]), rec("b", &[1])];
        let once = augment_corpus(&recs, &[50, 50], 10, 4).unwrap();
        let lens = vec![50; 6];
        let twice = augment_corpus(
            &augment_corpus(&recs, &[50, 50], 6, 4).unwrap(),
            &lens,
            10,
            4,
        )
        .unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn render_matches_provenance() {
        let a = clip(vec![0.1, 0.2, 0.3, 0.4]);
        let b = clip(vec![0.4, 0.3]);
        let recs = vec![rec("a", &[0]), rec("b", &[1])];
        let out = augment_corpus(&recs, &[4, 2], 6, 2).unwrap();
        let src = |id: &str| match id {
            "a" => Ok(a.clone()),
            "b" => Ok(b.clone()),
            _ => Err(format!("no clip {id}")),
        };
        for r in &out[2..] {
            let audio = render_derived(r, src).unwrap();
            assert!(audio.samples.len() <= 4);
        }
        assert!(matches!(
            render_derived(&recs[0], src),
            Err(AugmentError::NotDerived(_))
        ));
    }

    proptest! {
        #[test]
        fn shift_inverse_and_multiset(v in prop::collection::vec(-1.0f32..1.0, 1..200), s in 0usize..1000) {
            let c = clip(v);
            let n = c.samples.len();
            let s = s % n;
            let shifted = circular_shift(&c, s);
            prop_assert_eq!(circular_shift(&shifted, (n - s) % n), c.clone());
            let mut x = c.samples.clone();
            let mut y = shifted.samples.clone();
            x.sort_by(f32::total_cmp);
            y.sort_by(f32::total_cmp);
            prop_assert_eq!(x, y);
        }

        #[test]
        fn mix_commutes(a in prop::collection::vec(-1.0f32..1.0, 1..50), b in prop::collection::vec(-1.0f32..1.0, 1..50), g in 0.5f32..1.0) {
            let (a, b) = (clip(a), clip(b));
            prop_assert_eq!(mix_clips(&a, &b, g, g).unwrap(), mix_clips(&b, &a, g, g).unwrap());
        }
    }
}
