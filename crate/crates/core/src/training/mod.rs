//! Loss assembly, the progressive/unified training loops, two-phase
//! pretraining and checkpoints.

mod checkpoint;
mod config;
mod log;
mod loss;
mod trainer;

pub use checkpoint::{install, Checkpoint, RunIdentity};
pub use config::TrainConfig;
pub use log::{read_metrics, MetricsLog, MetricsRecord};
pub use loss::{speaker_classification_loss, total_loss, LossTerms, LossWeights};
pub use trainer::{
    pretrain_then_finetune, train_progressive, train_unified, Phase, TrainData, TrainOutcome, TrainState, Trainer,
};
