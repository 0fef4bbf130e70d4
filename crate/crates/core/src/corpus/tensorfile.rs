//! Standalone tensor files for exported spectrograms and CAMs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{container, CorpusError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DCAMTNS\0";

#[derive(Serialize, Deserialize)]
struct Header {
    shape: Vec<usize>,
    #[serde(default)]
    meta: BTreeMap<String, String>,
}

pub fn write_tensor_file(
    path: &Path,
    tensor: &Tensor<f32>,
    meta: &BTreeMap<String, String>,
) -> Result<(), CorpusError> {
    let header = Header {
        shape: tensor.shape().to_vec(),
        meta: meta.clone(),
    };
    fs::write(path, container::encode(MAGIC, &header, tensor.data()))
        .map_err(|e| CorpusError::io(path, e))
}

pub fn read_tensor_file(
    path: &Path,
) -> Result<(Tensor<f32>, BTreeMap<String, String>), CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let (header, data): (Header, Vec<f32>) = container::decode(MAGIC, &bytes)?;
    let n: usize = header.shape.iter().product();
    if data.len() < n {
        return Err(CorpusError::Truncated(format!(
            "{} of {n} values",
            data.len()
        )));
    }
    let t =
        Tensor::new(header.shape, data).map_err(|e| CorpusError::ShapeMismatch(e.to_string()))?;
    Ok((t, header.meta))
}
