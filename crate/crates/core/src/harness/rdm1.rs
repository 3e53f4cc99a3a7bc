//! `RDM1` radial-map files.
//!
//! Layout: the magic `RDM1`, then little-endian `u32` width, height and
//! frames, then `frames * height * width` little-endian `f32` values in
//! frame-major, row-major order. Non-finite values mark invalid pixels.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CrepeError, Result};
use crate::supervision::RadialMap;

pub const MAGIC: &[u8; 4] = b"RDM1";
const HEADER_LEN: usize = 16;

/// Optional `<file>.json` metadata stored next to a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rdm1Sidecar {
    pub near_stat: Option<f64>,
    pub units: String,
    pub source_valid_policy: String,
}

impl Default for Rdm1Sidecar {
    fn default() -> Self {
        Self { near_stat: None, units: "meters".into(), source_valid_policy: "finite".into() }
    }
}

/// Serializes a map. Finite pixels flagged invalid upstream are written as
/// NaN so the validity mask survives the round trip; every other value keeps
/// its exact bits.
pub fn encode(map: &RadialMap) -> Result<Vec<u8>> {
    let dim = |v: usize, name: &str| {
        u32::try_from(v).map_err(|_| CrepeError::input(format!("{name} {v} does not fit in u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim(map.width, "width")?.to_le_bytes());
    out.extend_from_slice(&dim(map.height, "height")?.to_le_bytes());
    out.extend_from_slice(&dim(map.frames, "frames")?.to_le_bytes());
    for (v, ok) in map.values.iter().zip(&map.source_valid) {
        let v = if *ok || !v.is_finite() { *v } else { f32::NAN };
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CrepeError::parse(bytes.len(), format!("truncated header, expected u32 at byte {offset}")))
}

pub fn decode(bytes: &[u8]) -> Result<RadialMap> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CrepeError::parse(0, "missing RDM1 magic"));
    }
    let width = read_u32(bytes, 4)? as usize;
    let height = read_u32(bytes, 8)? as usize;
    let frames = read_u32(bytes, 12)? as usize;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(frames))
        .ok_or_else(|| CrepeError::parse(4, "dimensions overflow"))?;
    let expected = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| CrepeError::parse(4, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(CrepeError::parse(
            bytes.len().min(expected),
            format!("payload holds {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    if count == 0 {
        return Err(CrepeError::parse(4, "zero-sized map"));
    }
    let values: Vec<f32> =
        bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    RadialMap::from_values(frames, height, width, values)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write(path: &Path, map: &RadialMap, sidecar: Option<&Rdm1Sidecar>) -> Result<()> {
    fs::write(path, encode(map)?)?;
    if let Some(meta) = sidecar {
        let json = serde_json::to_string_pretty(meta).map_err(|e| CrepeError::input(e.to_string()))?;
        fs::write(sidecar_path(path), json)?;
    }
    Ok(())
}

/// Reads a map and its sidecar, if one exists.
pub fn read(path: &Path) -> Result<(RadialMap, Option<Rdm1Sidecar>)> {
    let map = decode(&fs::read(path)?)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = fs::read_to_string(&side)?;
        Some(super::parse_json(&text)?)
    } else {
        None
    };
    Ok((map, meta))
}
