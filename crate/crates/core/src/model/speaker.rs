//! Frame-level speaker embedder: a small time-delay stack of dilated,
//! length-preserving convolutions over normalized Fbank.

use rand_chacha::ChaCha8Rng;

use crate::audio::N_MELS;
use crate::error::{Error, Result};
use crate::numerics::{Conv1d, Graph, Linear, ParamStore, Tensor2D, Var};

use super::ModelConfig;

/// Fixed affine normalization of log-mel energies, `(x − center) / spread`.
/// Chosen from the range of the synthetic corpus: silence sits at ln(1e-10).
pub const FBANK_CENTER: f64 = -1.0;
pub const FBANK_SPREAD: f64 = 5.0;

const LAYERS: [(usize, usize); 3] = [(5, 1), (3, 2), (3, 3)];

#[derive(Clone, Debug)]
pub struct SpeakerEmbedder {
    convs: Vec<Conv1d>,
    classifier: Option<Linear>,
}

impl SpeakerEmbedder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut convs = Vec::with_capacity(LAYERS.len());
        let mut in_ch = N_MELS;
        for (i, &(k, d)) in LAYERS.iter().enumerate() {
            let out_ch = if i + 1 == LAYERS.len() { cfg.d_spk } else { cfg.tdnn_channels };
            convs.push(Conv1d::same(store, &format!("speaker.tdnn{i}"), in_ch, out_ch, k, d, rng)?);
            in_ch = out_ch;
        }
        let classifier = (cfg.speaker_classes > 0)
            .then(|| Linear::new(store, "speaker.classifier", cfg.d_spk, cfg.speaker_classes, rng));
        Ok(Self { convs, classifier })
    }

    /// `T x 80` Fbank to `T x D_spk` embeddings.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, fbank: &Tensor2D) -> Result<Var> {
        if fbank.cols() != N_MELS {
            return Err(Error::shape("speaker_embed", fbank.shape(), format!("Tx{N_MELS}")));
        }
        let x = g.input(fbank.map(|v| (v - FBANK_CENTER) / FBANK_SPREAD));
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            if i + 1 < self.convs.len() {
                h = g.silu(h);
            }
        }
        Ok(h)
    }

    /// Per-frame log-probabilities over training speakers, when the
    /// auxiliary classifier is configured.
    pub fn classify(&self, g: &mut Graph, store: &ParamStore, embeddings: Var) -> Result<Option<Var>> {
        match &self.classifier {
            Some(c) => {
                let logits = c.forward(g, store, embeddings)?;
                Ok(Some(g.log_softmax_rows(logits)))
            }
            None => Ok(None),
        }
    }
}
