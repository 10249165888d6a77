//! WAV files, RTTM files and the JSON-lines corpus manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SegmentAnnotation, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wav.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

/// Reads a mono 16 kHz WAV (16-bit integer or 32-bit float).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate {
            expected: SAMPLE_RATE,
            got: spec.sample_rate,
        });
    }
    if spec.channels != 1 {
        return Err(Error::format(path.display(), format!("{} channels, expected mono", spec.channels)));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => r
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / i16::MAX as f64))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::format(path.display(), format!("unsupported sample format {fmt:?}/{bits}")));
        }
    };
    let id = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(Waveform {
        id,
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn write_rttm(path: &Path, session_id: &str, ann: &SegmentAnnotation) -> Result<()> {
    fs::write(path, ann.to_rttm(session_id))?;
    Ok(())
}

pub fn read_rttm(path: &Path) -> Result<SegmentAnnotation> {
    SegmentAnnotation::from_rttm(&fs::read_to_string(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub rttm_path: PathBuf,
    pub duration_seconds: f64,
}

impl ManifestEntry {
    /// Session id taken from the audio file stem.
    pub fn session_id(&self) -> String {
        self.audio_path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(())
}

/// Reads a manifest; relative paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let f = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut e: ManifestEntry = serde_json::from_str(&line)?;
        if e.audio_path.is_relative() {
            e.audio_path = base.join(&e.audio_path);
        }
        if e.rttm_path.is_relative() {
            e.rttm_path = base.join(&e.rttm_path);
        }
        out.push(e);
    }
    Ok(out)
}
