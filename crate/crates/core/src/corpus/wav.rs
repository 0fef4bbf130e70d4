use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::CorpusError;
use crate::features::AudioClip;

/// Reads mono 16-bit PCM or 32-bit float WAV.
pub fn read_wav(path: &Path) -> Result<AudioClip, CorpusError> {
    let reader = WavReader::open(path).map_err(|e| CorpusError::wav(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CorpusError::Format(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::wav(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::wav(path, e))?,
        (fmt, bits) => {
            return Err(CorpusError::Format(format!(
                "{}: unsupported sample format {fmt:?}/{bits} bits",
                path.display()
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate).map_err(|e| CorpusError::Format(e.to_string()))
}

/// Sample count and rate from the header, without decoding samples.
pub fn wav_length(path: &Path) -> Result<(usize, u32), CorpusError> {
    let reader = WavReader::open(path).map_err(|e| CorpusError::wav(path, e))?;
    Ok((reader.duration() as usize, reader.spec().sample_rate))
}

pub fn write_wav_pcm16(path: &Path, clip: &AudioClip) -> Result<(), CorpusError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| CorpusError::wav(path, e))?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| CorpusError::wav(path, e))?;
    }
    w.finalize().map_err(|e| CorpusError::wav(path, e))
}

pub fn write_wav_f32(path: &Path, clip: &AudioClip) -> Result<(), CorpusError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| CorpusError::wav(path, e))?;
    for &s in &clip.samples {
        w.write_sample(s).map_err(|e| CorpusError::wav(path, e))?;
    }
    w.finalize().map_err(|e| CorpusError::wav(path, e))
}
