//! Frame-level VAD/OSD targets with linear boundary ramps, and class-balanced
//! window curation.

mod cache;
mod curate;

pub use cache::{read_label_cache, write_label_cache};
pub use curate::{frame_class_histogram, make_windows, window_class, BalancedCurator, FrameClass, SegmentWindow};

use crate::audio::{frame_center_seconds, SegmentAnnotation, FRAME_SHIFT_SECONDS};
use crate::error::{Error, Result};

/// Width of each boundary ramp in frames.
pub const RAMP_FRAMES: usize = 10;
/// Frames per 5 s training window.
pub const WINDOW_FRAMES: usize = 250;

/// Per-frame fuzzy targets in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabelTrack {
    pub vad: Vec<f64>,
    pub osd: Vec<f64>,
}

impl FrameLabelTrack {
    pub fn len(&self) -> usize {
        self.vad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vad.is_empty()
    }

    pub fn frame_shift_seconds(&self) -> f64 {
        FRAME_SHIFT_SECONDS
    }

    /// Fuzzy VAD and OSD tracks from per-frame speaker counts.
    pub fn from_counts(counts: &[u32]) -> Self {
        let vad: Vec<f64> = counts.iter().map(|&c| f64::from(u8::from(c >= 1))).collect();
        let osd: Vec<f64> = counts.iter().map(|&c| f64::from(u8::from(c >= 2))).collect();
        Self {
            vad: fuzzify(&vad).expect("crisp by construction"),
            osd: fuzzify(&osd).expect("crisp by construction"),
        }
    }

    pub fn from_annotation(ann: &SegmentAnnotation, num_frames: usize) -> Self {
        Self::from_counts(&rasterize(ann, num_frames))
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            vad: self.vad[start..start + len].to_vec(),
            osd: self.osd[start..start + len].to_vec(),
        }
    }
}

/// Number of active speakers at each frame center `i·0.020 + 0.0125` s.
pub fn rasterize(ann: &SegmentAnnotation, num_frames: usize) -> Vec<u32> {
    // first frame whose center is at or after `t`
    let first_at_or_after = |t: f64| -> usize {
        let mut i = ((t - 0.0125) / FRAME_SHIFT_SECONDS).ceil().max(0.0) as usize;
        while i > 0 && frame_center_seconds(i - 1) >= t {
            i -= 1;
        }
        while frame_center_seconds(i) < t {
            i += 1;
        }
        i
    };
    let mut diff = vec![0i64; num_frames + 1];
    for s in &ann.entries {
        let a = first_at_or_after(s.onset).min(num_frames);
        let b = first_at_or_after(s.end()).min(num_frames);
        if a < b {
            diff[a] += 1;
            diff[b] -= 1;
        }
    }
    let mut acc = 0i64;
    diff[..num_frames]
        .iter()
        .map(|d| {
            acc += d;
            acc as u32
        })
        .collect()
}

/// Replaces every run of ones with linear ramps inside the run: the
/// onset ramp takes values `(k+1)/10` over the first ten frames, the offset
/// ramp mirrors it, and each frame keeps the smaller of the two, so short
/// runs become triangles. Frames outside runs stay zero.
pub fn fuzzify(crisp: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, v)) = crisp.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("fuzzify expects 0/1 labels, frame {i} is {v}")));
    }
    let mut out = vec![0.0; crisp.len()];
    let mut i = 0;
    while i < crisp.len() {
        if crisp[i] == 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < crisp.len() && crisp[i] == 1.0 {
            i += 1;
        }
        let len = i - start;
        for j in 0..len {
            let rise = (j + 1).min(RAMP_FRAMES);
            let fall = (len - j).min(RAMP_FRAMES);
            out[start + j] = rise.min(fall) as f64 / RAMP_FRAMES as f64;
        }
    }
    Ok(out)
}
