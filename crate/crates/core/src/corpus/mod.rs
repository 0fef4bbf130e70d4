//! On-disk corpus formats: manifests, audio, model weights, tensors, and
//! the synthetic corpus generator.

use std::path::Path;

use thiserror::Error;

mod container;
pub mod manifest;
pub mod synth;
pub mod tensorfile;
pub mod wav;
pub mod weights;

pub use manifest::{load_manifest, parse_manifest, save_manifest, ClipRecord, Provenance, Split};
pub use tensorfile::{read_tensor_file, write_tensor_file};
pub use wav::{read_wav, wav_length, write_wav_f32, write_wav_pcm16};
pub use weights::{load_weights, save_weights, TrainingMeta, WeightsFile};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Wav { path: String, source: hound::Error },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate clip id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown class `{class}`")]
    UnknownClass { line: usize, class: String },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error("unsupported file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn wav(path: &Path, source: hound::Error) -> Self {
        CorpusError::Wav {
            path: path.display().to_string(),
            source,
        }
    }
}
