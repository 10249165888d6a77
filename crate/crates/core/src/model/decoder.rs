//! Conformer-style score decoders.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore, Tensor2D, Var};

use super::ModelConfig;

#[derive(Clone, Debug)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, store, x)?;
        let h = self.up.forward(g, store, h)?;
        let h = g.silu(h);
        self.down.forward(g, store, h)
    }
}

/// Pointwise GLU, depthwise convolution, normalization, SiLU, pointwise.
#[derive(Clone, Debug)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: ParamId,
    depth_norm: LayerNorm,
    pointwise_out: Linear,
    dim: usize,
}

impl ConvModule {
    fn new(store: &mut ParamStore, name: &str, dim: usize, kernel: usize, rng: &mut ChaCha8Rng) -> Self {
        use rand::Rng;
        let limit = (3.0 / kernel as f64).sqrt();
        let dw = Tensor2D::from_fn(kernel, dim, |_, _| rng.random_range(-limit..limit));
        Self {
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim),
            pointwise_in: Linear::new(store, &format!("{name}.pw_in"), dim, 2 * dim, rng),
            depthwise: store.add(format!("{name}.depthwise"), dw),
            depth_norm: LayerNorm::new(store, &format!("{name}.dw_norm"), dim),
            pointwise_out: Linear::new(store, &format!("{name}.pw_out"), dim, dim, rng),
            dim,
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.norm.forward(g, store, x)?;
        let h = self.pointwise_in.forward(g, store, h)?;
        let a = g.slice_cols(h, 0, self.dim)?;
        let b = g.slice_cols(h, self.dim, self.dim)?;
        let gate = g.sigmoid(b);
        let h = g.mul(a, gate)?;
        let k = g.param(store, self.depthwise);
        let h = g.depthwise_conv1d(h, k)?;
        let h = self.depth_norm.forward(g, store, h)?;
        let h = g.silu(h);
        self.pointwise_out.forward(g, store, h)
    }
}

/// Half-step FF, self-attention, convolution, half-step FF, final norm.
#[derive(Clone, Debug)]
pub struct ConformerBlock {
    ff1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    conv: ConvModule,
    ff2: FeedForward,
    out_norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            ff1: FeedForward::new(store, &format!("{name}.ff1"), d, cfg.ff_mult * d, rng),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), d),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d, cfg.heads, rng)?,
            conv: ConvModule::new(store, &format!("{name}.conv"), d, cfg.conv_kernel, rng),
            ff2: FeedForward::new(store, &format!("{name}.ff2"), d, cfg.ff_mult * d, rng),
            out_norm: LayerNorm::new(store, &format!("{name}.out_norm"), d),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.ff1.forward(g, store, x)?;
        let h = g.scale(h, 0.5);
        let x = g.add(x, h)?;
        let n = self.attn_norm.forward(g, store, x)?;
        let h = self.attn.forward(g, store, n, n, n)?;
        let x = g.add(x, h)?;
        let h = self.conv.forward(g, store, x)?;
        let x = g.add(x, h)?;
        let h = self.ff2.forward(g, store, x)?;
        let h = g.scale(h, 0.5);
        let x = g.add(x, h)?;
        self.out_norm.forward(g, store, x)
    }
}

/// Stack of Conformer blocks followed by a per-frame linear-to-1 + sigmoid.
#[derive(Clone, Debug)]
pub struct ScoreDecoder {
    blocks: Vec<ConformerBlock>,
    head: Linear,
}

/// Decoder outputs: final hidden features and per-frame scores (`T x 1`).
#[derive(Clone, Copy, Debug)]
pub struct DecoderOutput {
    pub hidden: Var,
    pub scores: Var,
}

impl ScoreDecoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let blocks = (0..cfg.dec_blocks)
            .map(|i| ConformerBlock::new(store, &format!("{name}.block{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            blocks,
            head: Linear::new(store, &format!("{name}.head"), cfg.d_model, 1, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<DecoderOutput> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(g, store, h)?;
        }
        let logits = self.head.forward(g, store, h)?;
        Ok(DecoderOutput {
            hidden: h,
            scores: g.sigmoid(logits),
        })
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }
}
