//! Acoustic encoder: a strided convolutional front end over raw samples
//! followed by self-attention blocks, or precomputed features read from disk.

use rand_chacha::ChaCha8Rng;

use crate::audio::{frame_grid, HOP_SAMPLES, WINDOW_SAMPLES};
use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Graph, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tensor2D, Var};

use super::{EncoderSource, ModelConfig};

const CONV1_KERNEL: usize = 40;
const CONV1_STRIDE: usize = 20;
const CONV2_STRIDE: usize = HOP_SAMPLES / CONV1_STRIDE;
// conv2 spans exactly one 400-sample analysis window
const CONV2_KERNEL: usize = (WINDOW_SAMPLES - CONV1_KERNEL) / CONV1_STRIDE + 1;
/// Samples are scaled up before the first convolution so that typical
/// speech amplitudes land near unit range.
const WAVE_GAIN: f64 = 10.0;

/// What the encoder consumes for one segment.
#[derive(Clone, Copy, Debug)]
pub enum EncoderInput<'a> {
    Samples(&'a [f64]),
    Features(&'a Tensor2D),
}

#[derive(Clone, Debug)]
struct SelfAttentionBlock {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff_up: Linear,
    ff_down: Linear,
}

impl SelfAttentionBlock {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.heads, rng)?,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), d),
            ff_up: Linear::new(store, &format!("{name}.ff_up"), d, cfg.ff_mult * d, rng),
            ff_down: Linear::new(store, &format!("{name}.ff_down"), cfg.ff_mult * d, d, rng),
        })
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = self.attn_norm.forward(g, store, x)?;
        let h = self.attn.forward(g, store, n, n, n)?;
        let x = g.add(x, h)?;
        let n = self.ff_norm.forward(g, store, x)?;
        let h = self.ff_up.forward(g, store, n)?;
        let h = g.silu(h);
        let h = self.ff_down.forward(g, store, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Trainable {
        conv1: Conv1d,
        conv2: Conv1d,
        blocks: Vec<SelfAttentionBlock>,
        out_norm: LayerNorm,
    },
    Ingested {
        dim: usize,
        adapter: Option<Linear>,
    },
}

#[derive(Clone, Debug)]
pub struct Encoder {
    kind: Kind,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let kind = match &cfg.encoder {
            EncoderSource::Trainable => {
                let c1 = cfg.frontend_channels;
                let conv1 = Conv1d::new(store, "encoder.conv1", 1, c1, CONV1_KERNEL, CONV1_STRIDE, 1, 0, rng);
                let conv2 = Conv1d::new(store, "encoder.conv2", c1, cfg.d_model, CONV2_KERNEL, CONV2_STRIDE, 1, 0, rng);
                let blocks = (0..cfg.enc_blocks)
                    .map(|i| SelfAttentionBlock::new(store, &format!("encoder.block{i}"), cfg, rng))
                    .collect::<Result<_>>()?;
                Kind::Trainable {
                    conv1,
                    conv2,
                    blocks,
                    out_norm: LayerNorm::new(store, "encoder.out_norm", cfg.d_model),
                }
            }
            EncoderSource::Ingested { dim, adapter, .. } => {
                if !adapter && *dim != cfg.d_model {
                    return Err(Error::Config(format!(
                        "ingested features have dim {dim} but d_model is {}; enable the adapter",
                        cfg.d_model
                    )));
                }
                Kind::Ingested {
                    dim: *dim,
                    adapter: adapter.then(|| Linear::new(store, "encoder.adapter", *dim, cfg.d_model, rng)),
                }
            }
        };
        Ok(Self { kind })
    }

    pub fn is_trainable_frontend(&self) -> bool {
        matches!(self.kind, Kind::Trainable { .. })
    }

    /// `T x D_model` features; `expected_frames` is the label/fbank length
    /// the output must align with.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        input: EncoderInput<'_>,
        expected_frames: usize,
    ) -> Result<Var> {
        match (&self.kind, input) {
            (Kind::Trainable { conv1, conv2, blocks, out_norm }, EncoderInput::Samples(samples)) => {
                let t = frame_grid(samples.len())?;
                if t != expected_frames {
                    return Err(Error::Alignment {
                        what: "encoder waveform",
                        expected: expected_frames,
                        got: t,
                    });
                }
                let x = g.input(Tensor2D::column(&samples.iter().map(|s| s * WAVE_GAIN).collect::<Vec<_>>()));
                let h = conv1.forward(g, store, x)?;
                let h = g.silu(h);
                let mut h = conv2.forward(g, store, h)?;
                debug_assert_eq!(g.shape(h).0, t);
                for b in blocks {
                    h = b.forward(g, store, h)?;
                }
                out_norm.forward(g, store, h)
            }
            (Kind::Ingested { dim, adapter }, EncoderInput::Features(f)) => {
                if f.rows() != expected_frames {
                    return Err(Error::Alignment {
                        what: "ingested features",
                        expected: expected_frames,
                        got: f.rows(),
                    });
                }
                if f.cols() != *dim {
                    return Err(Error::shape("ingested features", f.shape(), format!("dim {dim}")));
                }
                let x = g.input(f.clone());
                match adapter {
                    Some(a) => a.forward(g, store, x),
                    None => Ok(x),
                }
            }
            (Kind::Trainable { .. }, EncoderInput::Features(_)) => {
                Err(Error::Config("trainable encoder expects waveform samples".into()))
            }
            (Kind::Ingested { .. }, EncoderInput::Samples(_)) => {
                Err(Error::Config("ingested encoder expects a feature matrix".into()))
            }
        }
    }
}
