//! Model weights file: architecture, class names, feature settings,
//! training metadata and every parameter and BN buffer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{container, CorpusError};
use crate::densenet::{ArchSpec, DenseNet, ModelWeights};
use crate::features::FeatureConfig;
use crate::labels::ClassVocab;
use crate::tensor::{Parameter, Tensor};

const MAGIC: &[u8; 8] = b"DCAMWTS\0";

/// Deliberately free of timestamps so identical runs give identical files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub config_hash: String,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// In `f32` elements from the start of the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
    classes: Vec<String>,
    features: FeatureConfig,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub arch: ArchSpec,
    pub vocab: ClassVocab,
    pub features: FeatureConfig,
    pub meta: TrainingMeta,
    pub weights: ModelWeights,
}

impl WeightsFile {
    pub fn from_model(
        model: &DenseNet,
        vocab: &ClassVocab,
        features: FeatureConfig,
        meta: TrainingMeta,
    ) -> Self {
        WeightsFile {
            arch: model.spec.clone(),
            vocab: vocab.clone(),
            features,
            meta,
            weights: model.weights.clone(),
        }
    }

    /// Builds the model described by the file's own architecture.
    pub fn model(&self) -> Result<DenseNet, CorpusError> {
        self.model_as(&self.arch)
    }

    /// Loads the stored tensors into `arch`, failing if any shape differs.
    pub fn model_as(&self, arch: &ArchSpec) -> Result<DenseNet, CorpusError> {
        DenseNet::from_weights(arch.clone(), self.weights.clone())
            .map_err(|e| CorpusError::ShapeMismatch(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let groups = [
            (TensorKind::Param, &self.weights.params),
            (TensorKind::Buffer, &self.weights.buffers),
        ];
        for (kind, list) in groups {
            for p in list.iter() {
                tensors.push(TensorEntry {
                    name: p.name.clone(),
                    kind,
                    shape: p.value.shape().to_vec(),
                    offset: payload.len(),
                });
                payload.extend_from_slice(p.value.data());
            }
        }
        let header = Header {
            arch: self.arch.clone(),
            classes: self.vocab.names().to_vec(),
            features: self.features,
            meta: self.meta.clone(),
            tensors,
        };
        container::encode(MAGIC, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        let (header, payload): (Header, Vec<f32>) = container::decode(MAGIC, bytes)?;
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        let mut expected_offset = 0;
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            if t.offset != expected_offset {
                return Err(CorpusError::Format(format!(
                    "tensor `{}` at offset {}, expected {expected_offset}",
                    t.name, t.offset
                )));
            }
            let end = t.offset + n;
            if end > payload.len() {
                return Err(CorpusError::Truncated(format!(
                    "tensor `{}` needs {end} values, payload has {}",
                    t.name,
                    payload.len()
                )));
            }
            let value = Tensor::new(t.shape, payload[t.offset..end].to_vec())
                .map_err(|e| CorpusError::Format(e.to_string()))?;
            let p = Parameter::new(t.name, value);
            match t.kind {
                TensorKind::Param => params.push(p),
                TensorKind::Buffer => buffers.push(p),
            }
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(CorpusError::Format(format!(
                "{} trailing values after last tensor",
                payload.len() - expected_offset
            )));
        }
        let vocab =
            ClassVocab::new(header.classes).map_err(|e| CorpusError::Format(e.to_string()))?;
        if vocab.len() != header.arch.n_classes {
            return Err(CorpusError::ShapeMismatch(format!(
                "{} class names for a {}-class model",
                vocab.len(),
                header.arch.n_classes
            )));
        }
        let file = WeightsFile {
            arch: header.arch,
            vocab,
            features: header.features,
            meta: header.meta,
            weights: ModelWeights { params, buffers },
        };
        file.model()?;
        Ok(file)
    }
}

pub fn save_weights(path: &Path, file: &WeightsFile) -> Result<(), CorpusError> {
    fs::write(path, file.to_bytes()).map_err(|e| CorpusError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<WeightsFile, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    WeightsFile::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (DenseNet, ClassVocab) {
        let spec = ArchSpec::densenet63(3).scaled(2, vec![1, 1, 1, 1]);
        let vocab = ClassVocab::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        (DenseNet::build(spec, 7).unwrap(), vocab)
    }

    fn file() -> WeightsFile {
        let (m, v) = tiny();
        let meta = TrainingMeta {
            seed: 7,
            epochs: 3,
            config_hash: "abc".into(),
            extra: BTreeMap::new(),
        };
        WeightsFile::from_model(&m, &v, FeatureConfig::default(), meta)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = file();
        let bytes = f.to_bytes();
        let back = WeightsFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = file().to_bytes();
        bytes[8] = 99;
        assert!(matches!(
            WeightsFile::from_bytes(&bytes),
            Err(CorpusError::VersionMismatch {
                found: 99,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = file().to_bytes();
        for cut in [4, 30, bytes.len() - 4] {
            assert!(
                matches!(
                    WeightsFile::from_bytes(&bytes[..cut]),
                    Err(CorpusError::Truncated(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn different_arch_is_shape_mismatch() {
        let f = file();
        let other = ArchSpec::densenet63(3).scaled(4, vec![1, 1, 1, 1]);
        assert!(matches!(
            f.model_as(&other),
            Err(CorpusError::ShapeMismatch(_))
        ));
        let fewer_classes = ArchSpec::densenet63(2).scaled(2, vec![1, 1, 1, 1]);
        assert!(matches!(
            f.model_as(&fewer_classes),
            Err(CorpusError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = file().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            WeightsFile::from_bytes(&bytes),
            Err(CorpusError::Format(_))
        ));
    }
}
