//! Synthetic speakers and multi-speaker session mixing.
//!
//! Each synthetic speaker is a harmonic source with a speaker-specific
//! fundamental, formant-like spectral envelope and syllable-rate amplitude
//! modulation. Sessions are built turn by turn: utterance lengths are
//! uniform in [1 s, 4 s], pauses exponential, and the next onset is pulled
//! back into the previous turn whenever the running overlap ratio falls
//! below target.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::{Segment, SegmentAnnotation, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

const SOURCE_RMS: f64 = 0.1;
const FADE_SAMPLES: usize = 80;
const PEAK_TARGET: f64 = 0.9;
const MIN_UTTERANCE_MS: u64 = 1000;
const MAX_UTTERANCE_MS: u64 = 4000;
/// The incoming turn always extends at least this far past the previous one.
const MIN_TAIL_MS: u64 = 200;

fn frac(x: f64) -> f64 {
    x - x.floor()
}

/// Spectral signature of one synthetic speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct VoiceProfile {
    pub f0_hz: f64,
    /// `(center Hz, bandwidth Hz, relative gain)`.
    pub formants: [(f64, f64, f64); 3],
    pub tilt_db_per_octave: f64,
    pub syllable_rate_hz: f64,
}

impl VoiceProfile {
    /// Deterministic profile spread over the voice range by low-discrepancy
    /// sequences of the speaker index.
    pub fn for_speaker(id: u32) -> Self {
        let k = id as f64 + 1.0;
        Self {
            f0_hz: 90.0 * 2f64.powf(1.5 * frac(0.618_033_988_7 * k)),
            formants: [
                (300.0 + 550.0 * frac(0.754_877_666_2 * k), 90.0, 1.0),
                (900.0 + 1500.0 * frac(0.569_840_291 * k), 120.0, 0.7),
                (2400.0 + 1000.0 * frac(0.414_213_562_4 * k), 160.0, 0.45),
            ],
            tilt_db_per_octave: -(4.0 + 6.0 * frac(0.302_775_637_7 * k)),
            syllable_rate_hz: 3.0 + 3.0 * frac(0.236_067_977_5 * k),
        }
    }

    fn harmonic_gain(&self, hz: f64) -> f64 {
        let octaves = (hz / self.f0_hz).log2().max(0.0);
        let tilt = 10f64.powf(self.tilt_db_per_octave * octaves / 20.0);
        let shape: f64 = self
            .formants
            .iter()
            .map(|&(c, bw, g)| g / (1.0 + ((hz - c) / bw).powi(2)))
            .sum();
        tilt * (0.05 + shape)
    }
}

/// Speech-like source for `speaker_id`, `duration` seconds long. Identity
/// comes from the speaker id; `seed` only varies phases and prosody.
pub fn synth_speaker_source(speaker_id: u32, duration: f64, seed: u64) -> Waveform {
    let n = (duration * SAMPLE_RATE as f64).round().max(0.0) as usize;
    let profile = VoiceProfile::for_speaker(speaker_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(speaker_id) << 32 | 0x5bd1_e995));
    let vib_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let drift_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let am_phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let sr = SAMPLE_RATE as f64;
    let n_harm = ((7000.0 / (profile.f0_hz * 1.06)).floor() as usize).max(1);
    let mut gains = vec![0.0; n_harm];
    let mut out = Vec::with_capacity(n);
    const BLOCK: usize = 64;
    for start in (0..n).step_by(BLOCK) {
        let t0 = start as f64 / sr;
        let f0 = profile.f0_hz
            * (1.0
                + 0.04 * (std::f64::consts::TAU * 0.5 * t0 + vib_phase).sin()
                + 0.02 * (std::f64::consts::TAU * 2.3 * t0 + drift_phase).sin());
        for (h, g) in gains.iter_mut().enumerate() {
            *g = profile.harmonic_gain(f0 * (h + 1) as f64);
        }
        let dphi = std::f64::consts::TAU * f0 / sr;
        for i in start..(start + BLOCK).min(n) {
            let t = i as f64 / sr;
            let (s1, c1) = phase.sin_cos();
            // sin(hφ) by the Chebyshev recurrence
            let (mut prev, mut cur) = (0.0, s1);
            let mut acc = 0.0;
            for &g in &gains {
                acc += g * cur;
                let next = 2.0 * c1 * cur - prev;
                prev = cur;
                cur = next;
            }
            let am = 0.35 + 0.65 * (0.5 - 0.5 * (std::f64::consts::TAU * profile.syllable_rate_hz * t + am_phase).cos());
            out.push(acc * am);
            phase = (phase + dphi) % std::f64::consts::TAU;
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= SOURCE_RMS / rms);
    }
    Waveform::new(format!("spk{speaker_id:02}"), out)
}

/// Parameters of one simulated conversation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub num_speakers: usize,
    /// Fraction of speech time with two or more active speakers.
    pub target_overlap_ratio: f64,
    pub session_seconds: f64,
    pub gap_mean_seconds: f64,
    pub seed: u64,
    /// Speakers are drawn from ids `0..speaker_pool`.
    #[serde(default = "default_pool")]
    pub speaker_pool: u32,
    /// One-pole low-pass cutoff applied to the mixture (far-field coloration).
    #[serde(default)]
    pub lowpass_hz: Option<f64>,
}

fn default_pool() -> u32 {
    16
}

impl Default for MixSpec {
    fn default() -> Self {
        Self {
            num_speakers: 2,
            target_overlap_ratio: 0.2,
            session_seconds: 60.0,
            gap_mean_seconds: 1.0,
            seed: 0,
            speaker_pool: default_pool(),
            lowpass_hz: None,
        }
    }
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.num_speakers) {
            return Err(Error::Config(format!("num_speakers must be in 2..=8, got {}", self.num_speakers)));
        }
        if !(0.0..1.0).contains(&self.target_overlap_ratio) {
            return Err(Error::Config(format!(
                "target_overlap_ratio must be in [0, 1), got {}",
                self.target_overlap_ratio
            )));
        }
        if !(self.session_seconds >= 1.0) || !(self.gap_mean_seconds > 0.0) {
            return Err(Error::Config("session_seconds must be ≥ 1 and gap_mean_seconds > 0".into()));
        }
        if (self.speaker_pool as usize) < self.num_speakers {
            return Err(Error::Config(format!(
                "speaker_pool {} is smaller than num_speakers {}",
                self.speaker_pool, self.num_speakers
            )));
        }
        Ok(())
    }
}

struct Turn {
    speaker: usize,
    onset_ms: u64,
    end_ms: u64,
}

/// Exact speech and overlap milliseconds of a set of turns.
fn speech_overlap_ms(turns: &[Turn]) -> (u64, u64) {
    let mut events: Vec<(u64, i32)> = turns.iter().flat_map(|t| [(t.onset_ms, 1), (t.end_ms, -1)]).collect();
    events.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut speech, mut overlap, mut active, mut last) = (0, 0, 0, 0);
    for (t, d) in events {
        if active >= 1 {
            speech += t - last;
        }
        if active >= 2 {
            overlap += t - last;
        }
        active += d;
        last = t;
    }
    (speech, overlap)
}

/// Generates a mixed session and the annotation that exactly describes it.
pub fn mix_session(spec: &MixSpec) -> Result<(Waveform, SegmentAnnotation)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ids: Vec<u32> = sample(&mut rng, spec.speaker_pool as usize, spec.num_speakers)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    let gains: Vec<f64> = (0..spec.num_speakers).map(|_| rng.random_range(0.5..=1.0)).collect();
    let gap = Exp::new(1.0 / spec.gap_mean_seconds).map_err(|e| Error::Config(e.to_string()))?;
    let session_ms = (spec.session_seconds * 1000.0).round() as u64;
    let r = spec.target_overlap_ratio;

    let mut turns: Vec<Turn> = Vec::new();
    loop {
        let len_ms = rng.random_range(MIN_UTTERANCE_MS..=MAX_UTTERANCE_MS);
        let gap_ms = (gap.sample(&mut rng) * 1000.0).round() as u64;
        let (speaker, onset_ms) = match turns.last() {
            None => (rng.random_range(0..spec.num_speakers), gap_ms),
            Some(prev) => {
                let mut speaker = rng.random_range(0..spec.num_speakers - 1);
                if speaker >= prev.speaker {
                    speaker += 1;
                }
                let (speech, overlap) = speech_overlap_ms(&turns);
                let wanted = (r * (speech + len_ms) as f64 - overlap as f64) / (1.0 + r);
                // only the single-speaker tail of the previous turn may be overlapped
                let others_end = turns[..turns.len() - 1].iter().map(|t| t.end_ms).max().unwrap_or(0);
                let tail = prev.end_ms - prev.onset_ms.max(others_end).min(prev.end_ms);
                let cap = tail.min(len_ms.saturating_sub(MIN_TAIL_MS));
                // overlap turns take a large share of the available tail so that
                // overlap and pause regions both stay contiguous
                let v = if wanted >= 1.0 {
                    let share = rng.random_range(0.5..=1.0) * cap as f64;
                    (wanted.max(share).round() as u64).min(cap)
                } else {
                    0
                };
                if v > 0 {
                    (speaker, prev.end_ms - v)
                } else {
                    (speaker, prev.end_ms + gap_ms)
                }
            }
        };
        if onset_ms + MIN_TAIL_MS >= session_ms {
            break;
        }
        let end_ms = (onset_ms + len_ms).min(session_ms);
        turns.push(Turn {
            speaker,
            onset_ms,
            end_ms,
        });
    }

    let n = session_ms as usize * (SAMPLE_RATE as usize / 1000);
    let mut mix = vec![0.0; n];
    for (i, turn) in turns.iter().enumerate() {
        let dur = (turn.end_ms - turn.onset_ms) as f64 / 1000.0;
        let seed = spec.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
        let src = synth_speaker_source(ids[turn.speaker], dur, seed);
        let start = turn.onset_ms as usize * 16;
        let len = src.samples.len();
        let fade = FADE_SAMPLES.min(len / 2);
        for (j, &s) in src.samples.iter().enumerate() {
            let edge = j.min(len - 1 - j);
            let w = if edge < fade {
                0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / fade as f64).cos()
            } else {
                1.0
            };
            mix[start + j] += gains[turn.speaker] * w * s;
        }
    }
    if let Some(fc) = spec.lowpass_hz {
        let alpha = 1.0 - (-std::f64::consts::TAU * fc / SAMPLE_RATE as f64).exp();
        let mut y = 0.0;
        for s in mix.iter_mut() {
            y += alpha * (*s - y);
            *s = y;
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        mix.iter_mut().for_each(|s| *s *= PEAK_TARGET / peak);
    }

    let entries = turns
        .iter()
        .map(|t| Segment {
            speaker: format!("spk{:02}", ids[t.speaker]),
            onset: t.onset_ms as f64 / 1000.0,
            duration: (t.end_ms - t.onset_ms) as f64 / 1000.0,
        })
        .collect();
    Ok((Waveform::new(format!("mix{:08x}", spec.seed), mix), SegmentAnnotation::new(entries)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_is_deterministic_with_exact_length() {
        let a = synth_speaker_source(3, 0.5, 11);
        let b = synth_speaker_source(3, 0.5, 11);
        assert_eq!(a.samples.len(), 8000);
        assert_eq!(a, b);
        assert_ne!(a.samples, synth_speaker_source(3, 0.5, 12).samples);
    }

    #[test]
    fn profiles_are_distinct() {
        let p: Vec<VoiceProfile> = (0..16).map(VoiceProfile::for_speaker).collect();
        for i in 0..16 {
            for j in (i + 1)..16 {
                assert!((p[i].f0_hz - p[j].f0_hz).abs() > 1.0, "{i} {j}");
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let bad = MixSpec {
            target_overlap_ratio: 1.0,
            ..Default::default()
        };
        assert!(matches!(mix_session(&bad), Err(Error::Config(_))));
        let bad = MixSpec {
            num_speakers: 9,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_target_has_no_overlap() {
        let spec = MixSpec {
            num_speakers: 2,
            target_overlap_ratio: 0.0,
            session_seconds: 120.0,
            seed: 5,
            ..Default::default()
        };
        let (w, ann) = mix_session(&spec).unwrap();
        assert_eq!(ann.speech_and_overlap_seconds().1, 0.0);
        assert!(w.peak() <= 1.0);
        ann.validate().unwrap();
        for s in &ann.entries {
            assert!(s.onset >= 0.0 && s.end() <= spec.session_seconds + 1e-9);
        }
    }
}
