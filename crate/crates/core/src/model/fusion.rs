//! Speaker attention fusion, temporal masking and the speaker-MSE alignment
//! loss.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, MultiHeadAttention, ParamStore, Tensor2D, Var};

use super::ModelConfig;

/// Cross-attention with acoustic frames as queries and speaker frames as
/// keys and values, added back onto the acoustic frames.
#[derive(Clone, Debug)]
pub struct SpeakerAttention {
    kv_proj: Linear,
    attn: MultiHeadAttention,
}

impl SpeakerAttention {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            kv_proj: Linear::new(store, "fusion.kv_proj", cfg.d_spk, cfg.d_model, rng),
            attn: MultiHeadAttention::new(store, "fusion.attn", cfg.d_model, cfg.heads, rng)?,
        })
    }

    pub fn kv_projection(&self) -> &Linear {
        &self.kv_proj
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        &self.attn
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, r_raw: Var, r_spk: Var) -> Result<Var> {
        let (t_raw, t_spk) = (g.shape(r_raw).0, g.shape(r_spk).0);
        if t_raw != t_spk {
            return Err(Error::Alignment {
                what: "speaker attention",
                expected: t_raw,
                got: t_spk,
            });
        }
        let kv = self.kv_proj.forward(g, store, r_spk)?;
        let h = self.attn.forward(g, store, r_raw, kv, kv)?;
        g.add(h, r_raw)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskMode {
    /// Row `i` is multiplied by the VAD score `s_i`.
    Soft,
    /// Rows with `s_i < threshold` become zero, the rest pass unscaled.
    Hard { threshold: f64 },
}

/// Gates the rows of `r_att` (`T x D`) by the VAD scores (`T x 1`).
pub fn temporal_mask(g: &mut Graph, s_vad: Var, r_att: Var, mode: MaskMode) -> Result<Var> {
    let (t_s, t_r) = (g.shape(s_vad).0, g.shape(r_att).0);
    if t_s != t_r {
        return Err(Error::Alignment {
            what: "temporal mask",
            expected: t_r,
            got: t_s,
        });
    }
    match mode {
        MaskMode::Soft => g.row_scale(r_att, s_vad),
        MaskMode::Hard { threshold } => {
            let gate = g.value(s_vad).map(|s| if s < threshold { 0.0 } else { 1.0 });
            let gate = g.input(gate);
            g.row_scale(r_att, gate)
        }
    }
}

/// Projects decoder hidden features to the speaker dimension and returns the
/// mean squared error against the (detached) speaker frames.
#[derive(Clone, Debug)]
pub struct SpeakerMseAlign {
    proj: Linear,
}

impl SpeakerMseAlign {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            proj: Linear::new(store, "spk_mse.proj", cfg.d_model, cfg.d_spk, rng),
        }
    }

    pub fn projection(&self) -> &Linear {
        &self.proj
    }

    pub fn loss(&self, g: &mut Graph, store: &ParamStore, hidden: Var, r_spk: Var) -> Result<Var> {
        let projected = self.proj.forward(g, store, hidden)?;
        speaker_mse(g, projected, r_spk)
    }
}

/// Mean over all `T x D_spk` entries of the squared difference.
pub fn speaker_mse(g: &mut Graph, projected: Var, r_spk: Var) -> Result<Var> {
    let (t_p, t_s) = (g.shape(projected).0, g.shape(r_spk).0);
    if t_p != t_s {
        return Err(Error::Alignment {
            what: "speaker mse",
            expected: t_s,
            got: t_p,
        });
    }
    g.mse_loss(projected, r_spk)
}

/// All-ones `T x 1` score track.
pub fn unit_scores(frames: usize) -> Tensor2D {
    Tensor2D::filled(frames, 1, 1.0)
}
