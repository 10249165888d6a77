//! `OSDF` feature files: magic, version byte, u32 frame count, u32 dim,
//! row-major little-endian f32 values, then a JSON trailer followed by its
//! u32 byte length.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2D;

const MAGIC: &[u8; 4] = b"OSDF";
const VERSION: u8 = 1;
const HEADER: usize = 13;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrailer {
    pub source_model: String,
    pub frame_shift_ms: f64,
    /// Extra keys written by exporters (e.g. the frame-rate adaptation).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl FeatureTrailer {
    pub fn new(source_model: impl Into<String>) -> Self {
        Self {
            source_model: source_model.into(),
            frame_shift_ms: 20.0,
            extra: serde_json::Map::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub features: Tensor2D,
    pub trailer: FeatureTrailer,
}

pub fn encode_osdf(file: &FeatureFile) -> Result<Vec<u8>> {
    let f = &file.features;
    let trailer = serde_json::to_vec(&file.trailer)?;
    let mut buf = Vec::with_capacity(HEADER + 4 * f.len() + trailer.len() + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(f.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(f.cols() as u32).to_le_bytes());
    for v in f.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&trailer);
    buf.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
    Ok(buf)
}

pub fn decode_osdf(bytes: &[u8], origin: &str) -> Result<FeatureFile> {
    let bad = |why: String| Error::format(origin, why);
    if bytes.len() < HEADER + 4 || &bytes[..4] != MAGIC {
        return Err(bad("missing OSDF magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (t, d) = (u32_at(5), u32_at(9));
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad(format!("header {t}x{d} overflows")))?;
    let tlen = u32_at(bytes.len() - 4);
    if HEADER + payload + tlen + 4 != bytes.len() {
        return Err(bad(format!(
            "size mismatch: header {t}x{d} with {tlen}-byte trailer needs {} bytes, file has {}",
            HEADER + payload + tlen + 4,
            bytes.len()
        )));
    }
    let data = bytes[HEADER..HEADER + payload]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    let trailer: FeatureTrailer = serde_json::from_slice(&bytes[HEADER + payload..HEADER + payload + tlen])
        .map_err(|e| bad(format!("bad trailer: {e}")))?;
    Ok(FeatureFile {
        features: Tensor2D::from_vec(t, d, data)?,
        trailer,
    })
}

pub fn write_osdf(path: &Path, file: &FeatureFile) -> Result<()> {
    fs::write(path, encode_osdf(file)?)?;
    Ok(())
}

pub fn read_osdf(path: &Path) -> Result<FeatureFile> {
    decode_osdf(&fs::read(path)?, &path.display().to_string())
}
