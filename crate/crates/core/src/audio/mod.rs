//! Waveforms, synthetic conversation mixing and the shared 25 ms / 20 ms
//! frame grid.

mod annotation;
mod fbank;
pub mod io;
mod synth;

pub use annotation::{Segment, SegmentAnnotation};
pub use fbank::{fbank, mel_band_centers, Fbank};
pub use synth::{mix_session, synth_speaker_source, MixSpec, VoiceProfile};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms analysis window.
pub const WINDOW_SAMPLES: usize = 400;
/// 20 ms frame shift.
pub const HOP_SAMPLES: usize = 320;
pub const FRAME_SHIFT_SECONDS: f64 = 0.020;
pub const N_MELS: usize = 80;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(id: impl Into<String>, samples: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn num_frames(&self) -> Result<usize> {
        frame_grid(self.samples.len())
    }

    pub fn check_rate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate {
                expected: SAMPLE_RATE,
                got: self.sample_rate,
            });
        }
        Ok(())
    }

    /// Samples covering frames `start..start + len` of the grid.
    pub fn frame_span(&self, start: usize, len: usize) -> Result<&[f64]> {
        let begin = start * HOP_SAMPLES;
        let end = begin + (len.max(1) - 1) * HOP_SAMPLES + WINDOW_SAMPLES;
        if len == 0 || end > self.samples.len() {
            return Err(Error::Alignment {
                what: "waveform frame span",
                expected: start + len,
                got: frame_grid(self.samples.len()).unwrap_or(0),
            });
        }
        Ok(&self.samples[begin..end])
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Number of 25 ms frames at a 20 ms hop: `floor((n − 400) / 320) + 1`.
pub fn frame_grid(num_samples: usize) -> Result<usize> {
    if num_samples < WINDOW_SAMPLES {
        return Err(Error::EmptyGrid {
            samples: num_samples,
        });
    }
    Ok((num_samples - WINDOW_SAMPLES) / HOP_SAMPLES + 1)
}

/// Center time of frame `i` in seconds.
pub fn frame_center_seconds(i: usize) -> f64 {
    i as f64 * FRAME_SHIFT_SECONDS + 0.0125
}

/// Energy of a sample span in dBFS (full scale = 1.0), `-inf` for silence.
pub fn dbfs(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NEG_INFINITY;
    }
    let ms = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    10.0 * ms.log10()
}
