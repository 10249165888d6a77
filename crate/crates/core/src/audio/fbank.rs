//! Log mel filterbank energies on the shared frame grid.
//!
//! Hann window over each 400-sample frame, zero-padded 512-point FFT, power
//! spectrum, 80 triangular HTK-mel filters spanning 20–7600 Hz, natural log
//! with a 1e-10 floor.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_grid, Waveform, HOP_SAMPLES, N_MELS, SAMPLE_RATE, WINDOW_SAMPLES};
use crate::error::Result;
use crate::numerics::Tensor2D;

const N_FFT: usize = 512;
const MEL_LOW_HZ: f64 = 20.0;
const MEL_HIGH_HZ: f64 = 7600.0;
pub const LOG_FLOOR: f64 = 1e-10;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the mel bands, ascending.
pub fn mel_band_centers() -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    let step = (hi - lo) / (N_MELS + 1) as f64;
    (1..=N_MELS).map(|m| mel_to_hz(lo + step * m as f64)).collect()
}

/// Reusable filterbank front end (FFT plan, window, filter weights).
pub struct Fbank {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// Per band: first bin and weights for consecutive bins.
    filters: Vec<(usize, Vec<f64>)>,
}

impl Default for Fbank {
    fn default() -> Self {
        Self::new()
    }
}

impl Fbank {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        let window = (0..WINDOW_SAMPLES)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW_SAMPLES as f64).cos())
            .collect();

        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let step = (hi - lo) / (N_MELS + 1) as f64;
        let n_bins = N_FFT / 2 + 1;
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let filters = (0..N_MELS)
            .map(|m| {
                let (left, center, right) = (lo + step * m as f64, lo + step * (m + 1) as f64, lo + step * (m + 2) as f64);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let mel = hz_to_mel(k as f64 * bin_hz);
                        let w = if mel > left && mel <= center {
                            (mel - left) / (center - left)
                        } else if mel > center && mel < right {
                            (right - mel) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                let first = weights.first().map_or(0, |w| w.0);
                (first, weights.into_iter().map(|w| w.1).collect())
            })
            .collect();
        Self { fft, window, filters }
    }

    /// `T x 80` log mel energies for a sample buffer on the 20 ms grid.
    pub fn compute(&self, samples: &[f64]) -> Result<Tensor2D> {
        let frames = frame_grid(samples.len())?;
        let mut out = Tensor2D::zeros(frames, N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        for t in 0..frames {
            let frame = &samples[t * HOP_SAMPLES..t * HOP_SAMPLES + WINDOW_SAMPLES];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < WINDOW_SAMPLES {
                    Complex::new(frame[i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = out.row_mut(t);
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum();
                row[m] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(out)
    }
}

/// Log mel filterbank of a 16 kHz waveform.
pub fn fbank(x: &Waveform) -> Result<Tensor2D> {
    x.check_rate()?;
    Fbank::new().compute(&x.samples)
}
