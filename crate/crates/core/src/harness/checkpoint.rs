//! `GHD1` geometry-head checkpoints.
//!
//! Layout: the magic `GHD1`, a little-endian `u32` header length, a UTF-8
//! JSON header listing tensor names and shapes in declaration order, then
//! every tensor as little-endian `f32` in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};
use crate::head::{hidden_width, HeadParams};

pub const MAGIC: &[u8; 4] = b"GHD1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub d_model: usize,
    pub d_hidden: usize,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(params: &HeadParams) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        d_model: params.d_model,
        d_hidden: params.d_hidden,
        tensors: params
            .shapes()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name: name.to_string(), shape })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| CrepeError::input(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| CrepeError::input("checkpoint header too large"))?;
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(8 + json.len() + 4 * flat.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in flat {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<HeadParams> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CrepeError::parse(0, "missing GHD1 magic"));
    }
    let len = bytes
        .get(4..8)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .ok_or_else(|| CrepeError::parse(bytes.len(), "truncated header length"))?;
    let json =
        bytes.get(8..8 + len).ok_or_else(|| CrepeError::parse(bytes.len(), format!("header claims {len} bytes")))?;
    let header: CheckpointHeader = serde_json::from_slice(json)
        .map_err(|e| CrepeError::parse(8 + super::json_error_offset(json, &e), e.to_string()))?;

    if header.d_model == 0 || header.d_hidden != hidden_width(header.d_model) {
        return Err(CrepeError::Validation(format!(
            "d_model {} with d_hidden {} is not a head layout",
            header.d_model, header.d_hidden
        )));
    }
    let expected = HeadParams::from_flat(header.d_model, &vec![0.0; HeadParams::count_for(header.d_model)])?.shapes();
    let declared: Vec<(String, Vec<usize>)> =
        header.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    let wanted: Vec<(String, Vec<usize>)> = expected.into_iter().map(|(n, s)| (n.to_string(), s)).collect();
    if declared != wanted {
        return Err(CrepeError::Validation(format!(
            "checkpoint tensors {declared:?} do not match the head layout {wanted:?}"
        )));
    }
    let payload = &bytes[8 + len..];
    let count = HeadParams::count_for(header.d_model);
    if payload.len() != 4 * count {
        return Err(CrepeError::parse(
            8 + len + payload.len().min(4 * count),
            format!("payload holds {} bytes, expected {}", payload.len(), 4 * count),
        ));
    }
    let flat: Vec<f64> = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    HeadParams::from_flat(header.d_model, &flat)
}

pub fn save(path: &Path, params: &HeadParams) -> Result<()> {
    fs::write(path, encode(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HeadParams> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::head_init;

    #[test]
    fn round_trip() {
        let mut p = head_init(32, 4);
        p.w2.iter_mut().enumerate().for_each(|(i, w)| *w = i as f64 * 0.01 - 0.1);
        let bytes = encode(&p).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        for (a, b) in back.to_flat().iter().zip(p.to_flat()) {
            assert_eq!(*a, b as f32 as f64);
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + len]).unwrap();
        assert_eq!(header["tensors"][2]["name"], "w1");
        assert_eq!(header["tensors"][2]["shape"], serde_json::json!([32, 16]));
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode(&head_init(16, 0)).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 2]), Err(CrepeError::Parse { .. })));
        assert!(matches!(decode(b"GHD2"), Err(CrepeError::Parse { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[9] = b'#';
        assert!(matches!(decode(&bad), Err(CrepeError::Parse { .. })));
    }
}
