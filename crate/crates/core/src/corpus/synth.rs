//! Synthetic weakly labelled corpus with known event timings.
//!
//! Each class is a fixed sound family (pure tone with a harmonic, linear
//! chirp, or band-passed noise) at its own centre frequency. Events are
//! mixed into white background noise at a per-event SNR. All random draws
//! happen in the same order whatever the SNR range, so two corpora that
//! differ only in SNR differ only in event gains.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, ClipRecord, Split};
use super::wav::write_wav_pcm16;
use super::CorpusError;
use crate::features::AudioClip;
use crate::labels::{ClassId, ClassVocab, EventInterval, WeakLabelSet};
use crate::rng::{rng_for, STREAM_SYNTH};

const FADE_S: f64 = 0.02;
const MIN_CENTER_HZ: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_eval: usize,
    pub clip_s: f64,
    pub sample_rate: u32,
    pub snr_db: (f64, f64),
    pub events_per_clip: (usize, usize),
    pub event_s: (f64, f64),
    pub background_rms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 4,
            n_train: 200,
            n_dev: 50,
            n_eval: 50,
            clip_s: 4.0,
            sample_rate: 16_000,
            snr_db: (5.0, 20.0),
            events_per_clip: (1, 3),
            event_s: (0.4, 1.6),
            background_rms: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Format(format!("synth config: {m}")));
        if self.n_classes == 0 {
            return bad("need at least one class");
        }
        if self.events_per_clip.0 > self.events_per_clip.1 {
            return bad("events_per_clip min exceeds max");
        }
        if !(self.event_s.0 > 0.0
            && self.event_s.0 <= self.event_s.1
            && self.event_s.1 < self.clip_s)
        {
            return bad("event durations must be positive and shorter than the clip");
        }
        if self.snr_db.0 > self.snr_db.1 {
            return bad("snr range min exceeds max");
        }
        if self.sample_rate < 1000 {
            return bad("sample rate below 1 kHz");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Tone,
    Chirp,
    Noise,
}

fn family(class: ClassId) -> Family {
    match class % 3 {
        0 => Family::Tone,
        1 => Family::Chirp,
        _ => Family::Noise,
    }
}

pub fn class_names(n_classes: usize) -> Vec<String> {
    (0..n_classes)
        .map(|c| {
            let f = match family(c) {
                Family::Tone => "tone",
                Family::Chirp => "chirp",
                Family::Noise => "noise",
            };
            format!("{f}{c}")
        })
        .collect()
}

/// Centre frequencies spaced geometrically from 400 Hz up to 0.3·fs.
pub fn center_hz(class: ClassId, n_classes: usize, sample_rate: u32) -> f64 {
    let top = (0.3 * sample_rate as f64).max(MIN_CENTER_HZ);
    if n_classes == 1 {
        return MIN_CENTER_HZ;
    }
    MIN_CENTER_HZ * (top / MIN_CENTER_HZ).powf(class as f64 / (n_classes - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEvent {
    pub class: ClassId,
    pub onset: f64,
    pub offset: f64,
    pub snr_db: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub id: String,
    pub split: Split,
    pub audio: AudioClip,
    pub events: Vec<SynthEvent>,
}

impl SynthClip {
    pub fn weak(&self) -> WeakLabelSet {
        self.events.iter().map(|e| e.class).collect()
    }

    pub fn strong(&self) -> Vec<EventInterval> {
        self.events
            .iter()
            .map(|e| EventInterval::new(e.class, e.onset, e.offset))
            .collect()
    }
}

fn round_ms(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Unit-RMS waveform of `n` samples for one event.
fn render_family(
    class: ClassId,
    cfg: &SynthConfig,
    n: usize,
    phase: f64,
    noise_seed: u64,
) -> Vec<f64> {
    let sr = cfg.sample_rate as f64;
    let f = center_hz(class, cfg.n_classes, cfg.sample_rate);
    let dur = n as f64 / sr;
    let mut x: Vec<f64> = match family(class) {
        Family::Tone => (0..n)
            .map(|i| {
                let w = 2.0 * PI * f * i as f64 / sr + phase;
                w.sin() + 0.4 * (2.0 * w).sin()
            })
            .collect(),
        Family::Chirp => {
            let (f0, f1) = (0.6 * f, 1.5 * f);
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur)) + phase).sin()
                })
                .collect()
        }
        Family::Noise => {
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            let white: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            bandpass(&white, f, 4.0, sr)
        }
    };
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

/// RBJ band-pass biquad with 0 dB peak gain.
fn bandpass(x: &[f64], f0: f64, q: f64, sr: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * f0 / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn fade(n: usize, i: usize, ramp: usize) -> f64 {
    if ramp == 0 {
        return 1.0;
    }
    let edge = i.min(n - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        (edge as f64 + 0.5) / ramp as f64
    }
}

struct Draft {
    class: ClassId,
    onset: f64,
    offset: f64,
    snr_u: f64,
    phase: f64,
    noise_seed: u64,
}

pub fn generate_clip(cfg: &SynthConfig, split: Split, index: usize) -> SynthClip {
    let stream_index = (split_code(split) << 40) | index as u64;
    let mut rng = rng_for(cfg.seed, STREAM_SYNTH, stream_index);
    let sr = cfg.sample_rate as f64;
    let n_total = (cfg.clip_s * sr).round() as usize;

    let k = rng.gen_range(cfg.events_per_clip.0..=cfg.events_per_clip.1);
    let mut drafts: Vec<Draft> = Vec::with_capacity(k);
    for _ in 0..k {
        let class = rng.gen_range(0..cfg.n_classes);
        let dur = rng.gen_range(cfg.event_s.0..=cfg.event_s.1);
        let onset = round_ms(rng.gen_range(0.0..=(cfg.clip_s - dur)));
        let offset = round_ms(onset + dur).min(cfg.clip_s);
        let d = Draft {
            class,
            onset,
            offset,
            snr_u: rng.gen(),
            phase: rng.gen_range(0.0..2.0 * PI),
            noise_seed: rng.gen(),
        };
        let clash = drafts
            .iter()
            .any(|o| o.class == d.class && d.onset < o.offset && o.onset < d.offset);
        if !clash {
            drafts.push(d);
        }
    }
    let background_seed: u64 = rng.gen();

    let mut bg_rng = ChaCha8Rng::seed_from_u64(background_seed);
    let amp = cfg.background_rms * 3f64.sqrt();
    let mut mix: Vec<f64> = (0..n_total)
        .map(|_| amp * bg_rng.gen_range(-1.0..1.0))
        .collect();

    let ramp = (FADE_S * sr) as usize;
    let mut events = Vec::with_capacity(drafts.len());
    for d in &drafts {
        let snr_db = cfg.snr_db.0 + d.snr_u * (cfg.snr_db.1 - cfg.snr_db.0);
        let gain = cfg.background_rms * 10f64.powf(snr_db / 20.0);
        let start = (d.onset * sr).round() as usize;
        let end = ((d.offset * sr).round() as usize).min(n_total);
        let n = end.saturating_sub(start);
        if n > 0 {
            let wave = render_family(d.class, cfg, n, d.phase, d.noise_seed);
            let ramp = ramp.min(n / 2);
            for (i, w) in wave.iter().enumerate() {
                mix[start + i] += gain * fade(n, i, ramp) * w;
            }
        }
        events.push(SynthEvent {
            class: d.class,
            onset: d.onset,
            offset: d.offset,
            snr_db,
            gain,
        });
    }
    events.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.class.cmp(&b.class)));

    let samples = mix.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
    SynthClip {
        id: format!("{}_{index:04}", split_name(split)),
        split,
        audio: AudioClip::new(samples, cfg.sample_rate).expect("valid synthetic clip"),
        events,
    }
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Dev => 1,
        Split::Eval => 2,
        Split::Unlabeled => 3,
    }
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Eval => "eval",
        Split::Unlabeled => "unlabeled",
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthClip>, CorpusError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.n_train + cfg.n_dev + cfg.n_eval);
    for (split, n) in [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::Eval, cfg.n_eval),
    ] {
        out.extend((0..n).map(|i| generate_clip(cfg, split, i)));
    }
    Ok(out)
}

/// Manifest record; training clips carry weak labels only.
pub fn record_for(clip: &SynthClip, audio_rel: PathBuf) -> ClipRecord {
    ClipRecord {
        id: clip.id.clone(),
        path: audio_rel,
        weak: clip.weak(),
        strong: (clip.split != Split::Train).then(|| clip.strong()),
        split: clip.split,
        derived_from: None,
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub vocab: ClassVocab,
    pub classes_path: PathBuf,
    pub manifests: Vec<(Split, PathBuf)>,
    pub events_path: PathBuf,
    pub n_clips: usize,
}

#[derive(Serialize)]
struct EventRow<'a> {
    id: &'a str,
    class: &'a str,
    onset: f64,
    offset: f64,
    snr_db: f64,
    gain: f64,
}

/// Writes `classes.txt`, `audio/*.wav`, one manifest per split and
/// `events.jsonl` with the per-event SNR and gain.
pub fn write_corpus(dir: &Path, cfg: &SynthConfig) -> Result<SynthOutput, CorpusError> {
    let clips = generate(cfg)?;
    let vocab = ClassVocab::new(class_names(cfg.n_classes)).expect("generated names are unique");
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| CorpusError::io(&audio_dir, e))?;
    let classes_path = dir.join("classes.txt");
    vocab
        .save(&classes_path)
        .map_err(|e| CorpusError::io(&classes_path, e))?;

    let mut events_out = Vec::new();
    let mut by_split: Vec<(Split, Vec<ClipRecord>)> = vec![
        (Split::Train, vec![]),
        (Split::Dev, vec![]),
        (Split::Eval, vec![]),
    ];
    for clip in &clips {
        let rel = PathBuf::from("audio").join(format!("{}.wav", clip.id));
        write_wav_pcm16(&dir.join(&rel), &clip.audio)?;
        for e in &clip.events {
            let row = EventRow {
                id: &clip.id,
                class: vocab.name(e.class),
                onset: e.onset,
                offset: e.offset,
                snr_db: e.snr_db,
                gain: e.gain,
            };
            writeln!(
                events_out,
                "{}",
                serde_json::to_string(&row).expect("serialize")
            )
            .expect("vec write");
        }
        let slot = by_split
            .iter_mut()
            .find(|(s, _)| *s == clip.split)
            .expect("known split");
        slot.1.push(record_for(clip, rel));
    }
    let mut manifests = Vec::new();
    for (split, records) in &by_split {
        let p = dir.join(format!("{}.jsonl", split_name(*split)));
        save_manifest(&p, records, &vocab)?;
        manifests.push((*split, p));
    }
    let events_path = dir.join("events.jsonl");
    fs::write(&events_path, events_out).map_err(|e| CorpusError::io(&events_path, e))?;
    Ok(SynthOutput {
        vocab,
        classes_path,
        manifests,
        events_path,
        n_clips: clips.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_train: 6,
            n_dev: 2,
            n_eval: 2,
            clip_s: 2.0,
            event_s: (0.3, 0.8),
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig {
            seed: 12,
            ..small()
        })
        .unwrap();
        assert_ne!(a[0].audio, c[0].audio);
    }

    #[test]
    fn snr_only_changes_gains() {
        let lo = generate(&SynthConfig {
            snr_db: (0.0, 0.0),
            ..small()
        })
        .unwrap();
        let hi = generate(&SynthConfig {
            snr_db: (30.0, 30.0),
            ..small()
        })
        .unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            assert_eq!(a.events.len(), b.events.len());
            for (ea, eb) in a.events.iter().zip(&b.events) {
                assert_eq!(
                    (ea.class, ea.onset, ea.offset),
                    (eb.class, eb.onset, eb.offset)
                );
                assert!((eb.gain / ea.gain - 10f64.powf(1.5)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn events_are_well_formed() {
        let cfg = small();
        for clip in generate(&cfg).unwrap() {
            assert!(!clip.events.is_empty());
            assert_eq!(clip.audio.samples.len(), 32_000);
            for (i, e) in clip.events.iter().enumerate() {
                assert!(e.onset >= 0.0 && e.offset <= cfg.clip_s && e.onset < e.offset);
                for o in &clip.events[i + 1..] {
                    assert!(o.class != e.class || o.onset >= e.offset || e.onset >= o.offset);
                }
            }
        }
    }

    #[test]
    fn event_raises_energy_in_its_span() {
        let cfg = SynthConfig {
            snr_db: (20.0, 20.0),
            ..small()
        };
        let clip = generate_clip(&cfg, Split::Dev, 0);
        let e = &clip.events[0];
        let sr = cfg.sample_rate as f64;
        let rms = |a: f64, b: f64| {
            let s = &clip.audio.samples[(a * sr) as usize..(b * sr) as usize];
            (s.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
        };
        let inside = rms(e.onset + 0.05, e.offset - 0.05);
        assert!(inside > 5.0 * cfg.background_rms, "inside rms {inside}");
    }

    #[test]
    fn writes_loadable_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_corpus(dir.path(), &small()).unwrap();
        assert_eq!(out.n_clips, 10);
        let vocab = ClassVocab::load(&out.classes_path).unwrap();
        assert_eq!(vocab.names(), ["tone0", "chirp1", "noise2", "tone3"]);
        for (split, p) in &out.manifests {
            let recs = crate::corpus::load_manifest(p, &vocab).unwrap();
            for r in &recs {
                assert_eq!(r.split, *split);
                assert_eq!(r.strong.is_some(), *split != Split::Train);
                let audio = crate::corpus::read_wav(&r.audio_path(dir.path())).unwrap();
                assert_eq!(audio.sample_rate, 16_000);
            }
        }
    }
}
