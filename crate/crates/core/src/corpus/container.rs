//! Shared binary layout: 8-byte magic, `u32` version, `u64` header length,
//! a JSON header, then little-endian `f32` payload.

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::CorpusError;

pub(crate) const VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

pub(crate) fn encode<H: Serialize>(magic: &[u8; 8], header: &H, payload: &[f32]) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("headers serialize");
    let mut out = Vec::with_capacity(PREFIX + json.len() + payload.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Returns the header and the payload as `f32`s.
pub(crate) fn decode<H: DeserializeOwned>(
    magic: &[u8; 8],
    bytes: &[u8],
) -> Result<(H, Vec<f32>), CorpusError> {
    if bytes.len() < PREFIX {
        return Err(CorpusError::Truncated(format!(
            "{} byte prefix",
            bytes.len()
        )));
    }
    if &bytes[..8] != magic {
        return Err(CorpusError::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic).trim_end_matches('\0')
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(CorpusError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[PREFIX..];
    if body.len() < hlen {
        return Err(CorpusError::Truncated(format!(
            "header needs {hlen} bytes, {} present",
            body.len()
        )));
    }
    let header: H = serde_json::from_slice(&body[..hlen])
        .map_err(|e| CorpusError::Format(format!("header: {e}")))?;
    let data = &body[hlen..];
    if !data.len().is_multiple_of(4) {
        return Err(CorpusError::Truncated(format!(
            "payload of {} bytes is not whole f32s",
            data.len()
        )));
    }
    let payload = data
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}
