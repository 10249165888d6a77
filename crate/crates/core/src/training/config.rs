use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::audio::FRAME_SHIFT_SECONDS;
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::numerics::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub base_lr: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub segment_seconds: f64,
    /// Spacing of candidate training windows.
    pub window_hop_seconds: f64,
    pub batch_size: usize,
    pub pretrain_epochs: u64,
    /// Epoch cap of the main (or only) phase.
    pub finetune_epochs: u64,
    /// Early stopping: epochs without dev OSD F1 improvement.
    pub patience: u64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Weight of the auxiliary frame-level speaker classification loss;
    /// 0 disables the classifier.
    pub speaker_loss_weight: f64,
    /// Decision threshold for the per-epoch dev F1.
    pub threshold: f64,
    /// Keep encoder parameters fixed (useful with ingested features).
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::default(),
            base_lr: 1e-4,
            lr_floor: 0.0,
            weight_decay: 1e-4,
            segment_seconds: 5.0,
            window_hop_seconds: 5.0,
            batch_size: 8,
            pretrain_epochs: 5,
            finetune_epochs: 20,
            patience: 5,
            seed: 0,
            loss_weights: LossWeights::default(),
            speaker_loss_weight: 0.0,
            threshold: 0.5,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss_weights.validate()?;
        if self.finetune_epochs == 0 {
            return Err(Error::Config("train.finetune_epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.base_lr >= 0.0) || !(self.lr_floor >= 0.0) || self.lr_floor > self.base_lr {
            return Err(Error::Config(format!(
                "need 0 ≤ lr_floor ≤ base_lr, got {} and {}",
                self.lr_floor, self.base_lr
            )));
        }
        if !(self.weight_decay >= 0.0) || !(self.speaker_loss_weight >= 0.0) {
            return Err(Error::Config("weight_decay and speaker_loss_weight must be ≥ 0".into()));
        }
        if self.window_frames() == 0 || self.hop_frames() == 0 {
            return Err(Error::Config("segment and hop must be at least one frame".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("train.threshold must be in (0,1), got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn window_frames(&self) -> usize {
        (self.segment_seconds / FRAME_SHIFT_SECONDS).round() as usize
    }

    pub fn hop_frames(&self) -> usize {
        (self.window_hop_seconds / FRAME_SHIFT_SECONDS).round() as usize
    }

    pub fn adam(&self, total_steps: u64) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            weight_decay: self.weight_decay,
            total_steps,
            lr_floor: self.lr_floor,
            ..AdamConfig::default()
        }
    }
}
