//! `OSDL` label cache: magic, version byte, u32 frame count, then the VAD
//! and OSD tracks as little-endian f32.

use std::fs;
use std::path::Path;

use super::FrameLabelTrack;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"OSDL";
const VERSION: u8 = 1;

pub fn write_label_cache(path: &Path, labels: &FrameLabelTrack) -> Result<()> {
    let t = labels.len();
    let mut buf = Vec::with_capacity(9 + 8 * t);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    for v in labels.vad.iter().chain(&labels.osd) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_label_cache(path: &Path) -> Result<FrameLabelTrack> {
    let bytes = fs::read(path)?;
    let bad = |why: &str| Error::format(path.display(), why);
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("missing OSDL magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let t = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 9 + 8 * t {
        return Err(bad(&format!("expected {} bytes for {t} frames, found {}", 9 + 8 * t, bytes.len())));
    }
    let floats: Vec<f64> = bytes[9..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
        .collect();
    Ok(FrameLabelTrack {
        vad: floats[..t].to_vec(),
        osd: floats[t..].to_vec(),
    })
}
