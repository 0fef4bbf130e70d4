//! Log mel filter bank energies (LFBE).
//!
//! Audio is cut into Hann-windowed frames, each frame's power spectrum is
//! projected onto triangular HTK-mel filters spanning 0 Hz to Nyquist, and
//! the result is log-compressed with a floor so that silence stays finite.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_N_MELS: usize = 64;
pub const DEFAULT_WIN_S: f64 = 0.025;
pub const DEFAULT_HOP_S: f64 = 0.010;
pub const DEFAULT_MAX_DURATION_S: f64 = 10.0;
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("clip too short: {samples} samples, window needs {window}")]
    ClipTooShort { samples: usize, window: usize },
    #[error("invalid feature parameters: {0}")]
    InvalidParams(String),
    #[error("invalid audio clip: {0}")]
    InvalidClip(String),
}

/// Mono PCM audio with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, FeatureError> {
        if sample_rate == 0 {
            return Err(FeatureError::InvalidClip(
                "sample rate must be positive".into(),
            ));
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn check_duration(&self, max_s: f64) -> Result<(), FeatureError> {
        // Allow one sample of rounding slack.
        if self.samples.len() as f64 > max_s * self.sample_rate as f64 + 1.0 {
            return Err(FeatureError::InvalidClip(format!(
                "duration {:.3} s exceeds maximum {max_s} s",
                self.duration_s()
            )));
        }
        Ok(())
    }
}

/// `T × N` log-energy matrix, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub frame_shift_s: f64,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn floor_value() -> f32 {
        LOG_FLOOR.ln() as f32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub win_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    /// `None` picks the next power of two at or above the window length.
    pub n_fft: Option<usize>,
    /// Per-clip mean/variance normalization of each mel band. Off by default.
    pub normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            win_s: DEFAULT_WIN_S,
            hop_s: DEFAULT_HOP_S,
            n_mels: DEFAULT_N_MELS,
            n_fft: None,
            normalize: false,
        }
    }
}

/// Converts a duration in seconds to a sample count, rounding down.
pub fn seconds_to_samples(seconds: f64, sample_rate: u32) -> usize {
    // The small bias keeps e.g. 0.29·100 from landing on 28.
    (seconds * sample_rate as f64 + 1e-9).floor() as usize
}

/// Number of full frames: `1 + floor((n − win) / hop)` when `n ≥ win`.
pub fn frame_count(n_samples: usize, win: usize, hop: usize) -> usize {
    if n_samples < win || win == 0 || hop == 0 {
        0
    } else {
        1 + (n_samples - win) / hop
    }
}

pub fn hann_window(len: usize) -> Vec<f64> {
    // Periodic Hann, the usual STFT choice.
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed frames of `floor(win_s·sr)` samples every `floor(hop_s·sr)`.
pub fn frame_signal(
    clip: &AudioClip,
    win_s: f64,
    hop_s: f64,
) -> Result<Vec<Vec<f64>>, FeatureError> {
    let (win, hop) = window_params(clip.sample_rate, win_s, hop_s)?;
    if clip.samples.is_empty() || clip.samples.len() < win {
        return Err(FeatureError::ClipTooShort {
            samples: clip.samples.len(),
            window: win,
        });
    }
    let window = hann_window(win);
    let n = frame_count(clip.samples.len(), win, hop);
    Ok((0..n)
        .map(|t| {
            clip.samples[t * hop..t * hop + win]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| s as f64 * w)
                .collect()
        })
        .collect())
}

fn window_params(sample_rate: u32, win_s: f64, hop_s: f64) -> Result<(usize, usize), FeatureError> {
    if !(hop_s > 0.0 && win_s >= hop_s) {
        return Err(FeatureError::InvalidParams(format!(
            "need win_s >= hop_s > 0, got win {win_s} hop {hop_s}"
        )));
    }
    let win = seconds_to_samples(win_s, sample_rate);
    let hop = seconds_to_samples(hop_s, sample_rate);
    if hop == 0 {
        return Err(FeatureError::InvalidParams(format!(
            "hop of {hop_s} s is below one sample at {sample_rate} Hz"
        )));
    }
    Ok((win, hop))
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters with unit peak.
#[derive(Debug, Clone)]
pub struct MelFilterBank {
    /// `n_mels × (n_fft/2 + 1)` weights.
    weights: Vec<Vec<f64>>,
    centers_hz: Vec<f64>,
}

impl MelFilterBank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let weights = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= lo || f >= hi {
                            0.0
                        } else if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        }
                    })
                    .collect()
            })
            .collect();
        MelFilterBank {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
        }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
            .collect()
    }
}

pub fn resolve_n_fft(config: &FeatureConfig, sample_rate: u32) -> usize {
    let win = seconds_to_samples(config.win_s, sample_rate);
    config
        .n_fft
        .unwrap_or_else(|| win.max(1).next_power_of_two())
}

/// Computes the LFBE spectrogram of a clip.
pub fn lfbe(clip: &AudioClip, config: &FeatureConfig) -> Result<Spectrogram, FeatureError> {
    if config.n_mels == 0 {
        return Err(FeatureError::InvalidParams(
            "n_mels must be at least 1".into(),
        ));
    }
    let (win, _) = window_params(clip.sample_rate, config.win_s, config.hop_s)?;
    let n_fft = resolve_n_fft(config, clip.sample_rate);
    if n_fft < win {
        return Err(FeatureError::InvalidParams(format!(
            "n_fft {n_fft} shorter than window {win}"
        )));
    }
    let frames = frame_signal(clip, config.win_s, config.hop_s)?;
    let bank = MelFilterBank::new(config.n_mels, n_fft, clip.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames.len() * config.n_mels);
    for frame in &frames {
        for (slot, v) in buf
            .iter_mut()
            .zip(frame.iter().chain(std::iter::repeat(&0.0)))
        {
            *slot = Complex::new(*v, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        out.extend(
            bank.apply(&power)
                .into_iter()
                .map(|e| (e.max(0.0) + LOG_FLOOR).ln().max(LOG_FLOOR.ln()) as f32),
        );
    }
    let mut spec = Spectrogram {
        frames: out,
        n_frames: frames.len(),
        n_mels: config.n_mels,
        frame_shift_s: seconds_to_samples(config.hop_s, clip.sample_rate) as f64
            / clip.sample_rate as f64,
    };
    if config.normalize {
        normalize_bands(&mut spec);
    }
    Ok(spec)
}

fn normalize_bands(spec: &mut Spectrogram) {
    let (t, n) = (spec.n_frames, spec.n_mels);
    for m in 0..n {
        let vals = (0..t).map(|i| spec.frames[i * n + m] as f64);
        let mean = vals.clone().sum::<f64>() / t as f64;
        let var = vals.map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let inv = 1.0 / (var.sqrt() + 1e-8);
        for i in 0..t {
            let v = &mut spec.frames[i * n + m];
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_frame_count(n: usize, win: usize, hop: usize) -> usize {
        let mut count = 0;
        let mut start = 0;
        while start + win <= n {
            count += 1;
            start += hop;
        }
        count
    }

    fn clip(samples: Vec<f32>, sr: u32) -> AudioClip {
        AudioClip::new(samples, sr).unwrap()
    }

    #[test]
    fn ten_seconds_at_44k1_gives_998_frames() {
        let c = clip(vec![0.0; 441_000], 44_100);
        assert_eq!(naive_frame_count(441_000, 1102, 441), 998);
        assert_eq!(frame_signal(&c, 0.025, 0.010).unwrap().len(), 998);
    }

    #[test]
    fn frame_lengths_follow_sample_rate() {
        assert_eq!(seconds_to_samples(0.025, 44_100), 1102);
        assert_eq!(seconds_to_samples(0.010, 44_100), 441);
        assert_eq!(seconds_to_samples(0.025, 16_000), 400);
        let c = clip(vec![0.1; 2000], 16_000);
        let frames = frame_signal(&c, 0.025, 0.010).unwrap();
        assert!(frames.iter().all(|f| f.len() == 400));
    }

    #[test]
    fn one_window_gives_one_frame() {
        let c = clip(vec![0.5; 400], 16_000);
        assert_eq!(frame_signal(&c, 0.025, 0.010).unwrap().len(), 1);
    }

    #[test]
    fn two_hops_plus_window_gives_three_frames() {
        let c = clip(vec![0.5; 2 * 160 + 400], 16_000);
        assert_eq!(frame_signal(&c, 0.025, 0.010).unwrap().len(), 3);
    }

    #[test]
    fn short_clip_is_rejected() {
        let c = clip(vec![0.5; 399], 16_000);
        assert_eq!(
            frame_signal(&c, 0.025, 0.010).unwrap_err(),
            FeatureError::ClipTooShort {
                samples: 399,
                window: 400
            }
        );
        assert!(frame_signal(&clip(vec![], 16_000), 0.025, 0.010).is_err());
    }

    #[test]
    fn bad_window_params_rejected() {
        let c = clip(vec![0.5; 4000], 16_000);
        assert!(frame_signal(&c, 0.005, 0.010).is_err());
        assert!(frame_signal(&c, 0.025, 0.0).is_err());
    }

    #[test]
    fn default_fft_size() {
        let cfg = FeatureConfig::default();
        assert_eq!(resolve_n_fft(&cfg, 44_100), 2048);
        assert_eq!(resolve_n_fft(&cfg, 16_000), 512);
    }

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let c = clip(vec![0.0; 16_000], 16_000);
        let s = lfbe(&c, &FeatureConfig::default()).unwrap();
        assert_eq!(s.n_mels, 64);
        assert_eq!(s.n_frames, frame_count(16_000, 400, 160));
        let floor = LOG_FLOOR.ln() as f32;
        assert!(s.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let sr = 44_100;
        let cfg = FeatureConfig::default();
        let bank = MelFilterBank::new(64, resolve_n_fft(&cfg, sr), sr);
        for band in [20usize, 32, 45, 58] {
            let f = bank.centers_hz()[band];
            let samples: Vec<f32> = (0..sr as usize / 2)
                .map(|i| (0.5 * (2.0 * PI * f * i as f64 / sr as f64).sin()) as f32)
                .collect();
            let s = lfbe(&clip(samples, sr), &cfg).unwrap();
            let mut mean = vec![0.0f64; 64];
            for t in 0..s.n_frames {
                for (m, v) in s.frame(t).iter().enumerate() {
                    mean[m] += *v as f64 / s.n_frames as f64;
                }
            }
            let argmax = (0..64)
                .max_by(|&a, &b| mean[a].total_cmp(&mean[b]))
                .unwrap();
            assert_eq!(argmax, band, "tone at {f:.1} Hz");
        }
    }

    #[test]
    fn self_concatenation_repeats_interior_frames() {
        // Length is a multiple of the hop so the second copy starts on a frame boundary.
        let sr = 16_000;
        let n = 160 * 50;
        let samples: Vec<f32> = (0..n)
            .map(|i| ((i as f64 * 0.0131).sin() * 0.3 + ((i * 7919) % 101) as f64 * 1e-3) as f32)
            .collect();
        let cfg = FeatureConfig::default();
        let once = lfbe(&clip(samples.clone(), sr), &cfg).unwrap();
        let mut doubled = samples.clone();
        doubled.extend_from_slice(&samples);
        let twice = lfbe(&clip(doubled, sr), &cfg).unwrap();
        // Frames straddling the seam are the boundary frames.
        let boundary = (400 - 1) / 160;
        assert_eq!(twice.n_frames, 2 * once.n_frames + boundary);
        let offset = n / 160;
        for t in 0..once.n_frames {
            for (a, b) in once.frame(t).iter().zip(twice.frame(t)) {
                assert!((a - b).abs() < 1e-6);
            }
            for (a, b) in once.frame(t).iter().zip(twice.frame(t + offset)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalization_flag_standardizes_bands() {
        let sr = 16_000;
        let samples: Vec<f32> = (0..8000).map(|i| ((i as f32) * 0.05).sin() * 0.2).collect();
        let cfg = FeatureConfig {
            normalize: true,
            ..FeatureConfig::default()
        };
        let s = lfbe(&clip(samples, sr), &cfg).unwrap();
        let m = 40;
        let mean: f64 =
            (0..s.n_frames).map(|t| s.frame(t)[m] as f64).sum::<f64>() / s.n_frames as f64;
        assert!(mean.abs() < 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn frame_count_matches_naive_loop(n in 0usize..20_000, win in 1usize..600, hop in 1usize..300) {
            prop_assume!(win >= hop);
            prop_assert_eq!(frame_count(n, win, hop), naive_frame_count(n, win, hop));
        }

        #[test]
        fn delay_by_whole_hops_shifts_frames(k in 1usize..6, seed in 0u64..1000) {
            let sr = 8_000;
            let hop = 80;
            let base: Vec<f32> = (0..2400)
                .map(|i| (((i as u64 * 2654435761 + seed) % 1000) as f32 / 1000.0 - 0.5) * 0.8)
                .collect();
            let mut delayed = vec![0.0f32; k * hop];
            delayed.extend_from_slice(&base);
            let cfg = FeatureConfig::default();
            let a = lfbe(&clip(base, sr), &cfg).unwrap();
            let b = lfbe(&clip(delayed, sr), &cfg).unwrap();
            prop_assert_eq!(b.n_frames, a.n_frames + k);
            for t in 0..a.n_frames {
                for (x, y) in a.frame(t).iter().zip(b.frame(t + k)) {
                    prop_assert!((x - y).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn output_is_always_finite(amp in 0.0f32..1.0, f in 20.0f64..3900.0, len in 200usize..3000) {
            let sr = 8_000;
            let samples: Vec<f32> = (0..len)
                .map(|i| amp * (2.0 * PI * f * i as f64 / sr as f64).sin() as f32)
                .collect();
            let s = lfbe(&clip(samples, sr), &FeatureConfig::default()).unwrap();
            prop_assert!(s.frames.iter().all(|v| v.is_finite()));
            prop_assert!(s.frames.iter().all(|&v| v >= Spectrogram::floor_value()));
        }
    }
}
