//! The detection network: encoder, speaker embedder, speaker fusion,
//! temporal mask and the VAD/OSD decoders.

mod decoder;
mod encoder;
mod features;
mod fusion;
mod speaker;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use decoder::{ConformerBlock, DecoderOutput, ScoreDecoder};
pub use encoder::{Encoder, EncoderInput};
pub use features::{decode_osdf, encode_osdf, read_osdf, write_osdf, FeatureFile, FeatureTrailer};
pub use fusion::{speaker_mse, temporal_mask, unit_scores, MaskMode, SpeakerAttention, SpeakerMseAlign};
pub use speaker::{SpeakerEmbedder, FBANK_CENTER, FBANK_SPREAD};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor2D, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum EncoderSource {
    /// Convolutional front end over raw samples plus self-attention blocks.
    Trainable,
    /// Features read from `OSDF` files of width `dim`.
    Ingested {
        dim: usize,
        /// Insert a trainable linear map from `dim` to `d_model`.
        adapter: bool,
        /// Short tag used in variant names, e.g. `xlsr`.
        #[serde(default)]
        tag: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub d_spk: usize,
    pub heads: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub frontend_channels: usize,
    pub tdnn_channels: usize,
    pub encoder: EncoderSource,
    /// Number of training speakers for the auxiliary classifier; 0 disables it.
    pub speaker_classes: usize,
    /// Cut the gradient from the OSD loss into the VAD branch at the mask.
    pub mask_stop_gradient: bool,
    pub mask_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_spk: 32,
            heads: 4,
            enc_blocks: 2,
            dec_blocks: 2,
            ff_mult: 2,
            conv_kernel: 15,
            frontend_channels: 32,
            tdnn_channels: 64,
            encoder: EncoderSource::Trainable,
            speaker_classes: 0,
            mask_stop_gradient: false,
            mask_threshold: 0.5,
        }
    }
}

impl ModelConfig {
    /// Smallest sensible configuration: width 8, one block everywhere.
    pub fn miniature() -> Self {
        Self {
            d_model: 8,
            d_spk: 4,
            heads: 2,
            enc_blocks: 1,
            dec_blocks: 1,
            ff_mult: 2,
            conv_kernel: 3,
            frontend_channels: 4,
            tdnn_channels: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_spk", self.d_spk),
            ("heads", self.heads),
            ("ff_mult", self.ff_mult),
            ("frontend_channels", self.frontend_channels),
            ("tdnn_channels", self.tdnn_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.d_model {} is not divisible by model.heads {}",
                self.d_model, self.heads
            )));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config(format!("model.conv_kernel must be odd, got {}", self.conv_kernel)));
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::Config(format!("model.mask_threshold must be in (0,1), got {}", self.mask_threshold)));
        }
        Ok(())
    }

    /// Short encoder tag for variant names (`None` for the trainable encoder).
    pub fn encoder_tag(&self) -> Option<&str> {
        match &self.encoder {
            EncoderSource::Trainable => None,
            EncoderSource::Ingested { tag, .. } => tag.as_deref(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// The OSD decoder sees VAD-masked features.
    Progressive,
    /// Both decoders see the same fused features.
    Unified,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    SpkAtt,
    SpkMse,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub strategy: Strategy,
    pub fusion: Fusion,
}

impl Variant {
    pub const ALLOWED: &'static str =
        "p-OSD, p-OSD-spkAtt, p-OSD-spkMSE, u-OSD, u-OSD-spkAtt, u-OSD-spkMSE (the -OSD infix may be omitted)";

    pub fn new(strategy: Strategy, fusion: Fusion) -> Self {
        Self { strategy, fusion }
    }

    /// Name with an optional encoder tag, e.g. `p-OSD-xlsr-spkAtt`.
    pub fn name_with_encoder(&self, tag: Option<&str>) -> String {
        let mut s = String::from(match self.strategy {
            Strategy::Progressive => "p-OSD",
            Strategy::Unified => "u-OSD",
        });
        if let Some(t) = tag {
            s.push('-');
            s.push_str(t);
        }
        match self.fusion {
            Fusion::SpkAtt => s.push_str("-spkAtt"),
            Fusion::SpkMse => s.push_str("-spkMSE"),
            Fusion::None => {}
        }
        s
    }
}

impl Default for Variant {
    fn default() -> Self {
        Self::new(Strategy::Progressive, Fusion::SpkAtt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name_with_encoder(None))
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown variant `{s}`; allowed: {}", Self::ALLOWED));
        let mut parts = s.split('-');
        let strategy = match parts.next() {
            Some("p") => Strategy::Progressive,
            Some("u") => Strategy::Unified,
            _ => return Err(bad()),
        };
        let rest: Vec<&str> = parts.collect();
        let rest = match rest.as_slice() {
            ["OSD", tail @ ..] => tail,
            tail => tail,
        };
        let fusion = match rest {
            [] | ["none"] => Fusion::None,
            ["spkAtt"] => Fusion::SpkAtt,
            ["spkMSE"] => Fusion::SpkMse,
            _ => return Err(bad()),
        };
        Ok(Self { strategy, fusion })
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One segment of model input on a shared frame grid.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub encoder: EncoderInput<'a>,
    /// `T x 80` log-mel features for the speaker embedder.
    pub fbank: &'a Tensor2D,
}

impl ModelInput<'_> {
    pub fn frames(&self) -> usize {
        self.fbank.rows()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOptions {
    pub mask: MaskMode,
    /// Replaces the VAD decoder's scores as mask input (testing aid).
    pub vad_override: Option<Tensor2D>,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            mask: MaskMode::Soft,
            vad_override: None,
        }
    }
}

/// Graph handles for everything a loss or a test may want to inspect.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub r_raw: Var,
    pub r_spk: Var,
    pub r_att: Var,
    /// Input of the OSD decoder: masked features (progressive) or `r_att`.
    pub r_osd_in: Var,
    /// `T x 1` scores in (0, 1).
    pub vad: Var,
    pub osd: Var,
    pub osd_hidden: Var,
    /// Speaker-MSE alignment loss for the `spkMSE` fusion.
    pub aux: Option<Var>,
    /// Per-frame speaker log-probabilities when the classifier is enabled.
    pub speaker_log_probs: Option<Var>,
}

/// Parameter registry plus the module structure that indexes into it.
#[derive(Clone, Debug)]
pub struct OsdModel {
    pub config: ModelConfig,
    pub variant: Variant,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub speaker: SpeakerEmbedder,
    pub fusion: Option<SpeakerAttention>,
    pub spk_mse: Option<SpeakerMseAlign>,
    pub vad_decoder: ScoreDecoder,
    pub osd_decoder: ScoreDecoder,
}

impl OsdModel {
    /// Builds a freshly initialized model. Parameters are created in a fixed
    /// order from a generator seeded with `seed`.
    pub fn new(config: ModelConfig, variant: Variant, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::new(&mut params, &config, &mut rng)?;
        let speaker = SpeakerEmbedder::new(&mut params, &config, &mut rng)?;
        let fusion = match variant.fusion {
            Fusion::SpkAtt => Some(SpeakerAttention::new(&mut params, &config, &mut rng)?),
            _ => None,
        };
        let spk_mse = match variant.fusion {
            Fusion::SpkMse => Some(SpeakerMseAlign::new(&mut params, &config, &mut rng)),
            _ => None,
        };
        let vad_decoder = ScoreDecoder::new(&mut params, "vad_decoder", &config, &mut rng)?;
        let osd_decoder = ScoreDecoder::new(&mut params, "osd_decoder", &config, &mut rng)?;
        Ok(Self {
            config,
            variant,
            params,
            encoder,
            speaker,
            fusion,
            spk_mse,
            vad_decoder,
            osd_decoder,
        })
    }

    pub fn name(&self) -> String {
        self.variant.name_with_encoder(self.config.encoder_tag())
    }

    pub fn forward(&self, g: &mut Graph, input: ModelInput<'_>, opts: &ForwardOptions) -> Result<ForwardOutput> {
        self.forward_with(&self.params, g, input, opts)
    }

    /// Forward pass reading parameter values from `store`, which must be
    /// laid out like `self.params` (used for finite-difference checks).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        input: ModelInput<'_>,
        opts: &ForwardOptions,
    ) -> Result<ForwardOutput> {
        let t = input.frames();
        let r_raw = self.encoder.forward(g, store, input.encoder, t)?;
        let r_spk = self.speaker.forward(g, store, input.fbank)?;
        let r_att = match &self.fusion {
            Some(f) => f.forward(g, store, r_raw, r_spk)?,
            None => r_raw,
        };
        let vad = self.vad_decoder.forward(g, store, r_att)?.scores;
        let r_osd_in = match self.variant.strategy {
            Strategy::Unified => r_att,
            Strategy::Progressive => {
                let gate = match &opts.vad_override {
                    Some(s) => {
                        if s.shape() != g.shape(vad) {
                            return Err(Error::shape("vad_override", s.shape(), g.shape(vad)));
                        }
                        g.input(s.clone())
                    }
                    None if self.config.mask_stop_gradient => g.detach(vad),
                    None => vad,
                };
                temporal_mask(g, gate, r_att, opts.mask)?
            }
        };
        let osd_out = self.osd_decoder.forward(g, store, r_osd_in)?;
        let aux = match &self.spk_mse {
            Some(m) => {
                // the speaker frames are a fixed target for the alignment
                let target = g.detach(r_spk);
                Some(m.loss(g, store, osd_out.hidden, target)?)
            }
            None => None,
        };
        let speaker_log_probs = self.speaker.classify(g, store, r_spk)?;
        Ok(ForwardOutput {
            r_raw,
            r_spk,
            r_att,
            r_osd_in,
            vad,
            osd: osd_out.scores,
            osd_hidden: osd_out.hidden,
            aux,
            speaker_log_probs,
        })
    }

    /// Forward pass without gradient bookkeeping beyond the tape; returns
    /// VAD and OSD score vectors.
    pub fn predict(&self, input: ModelInput<'_>, mask: MaskMode) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new();
        let out = self.forward(
            &mut g,
            input,
            &ForwardOptions {
                mask,
                vad_override: None,
            },
        )?;
        Ok((g.value(out.vad).data().to_vec(), g.value(out.osd).data().to_vec()))
    }
}
