use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::{install, Checkpoint, RunIdentity};
use super::loss::{speaker_classification_loss, total_loss};
use super::log::MetricsRecord;
use super::TrainConfig;
use crate::corpus::{Corpus, Session};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_corpus, prf, window_input, Prf};
use crate::labeling::{make_windows, BalancedCurator, SegmentWindow};
use crate::model::{ForwardOptions, MaskMode, ModelConfig, OsdModel, Strategy};
use crate::numerics::{Adam, Graph, ParamStore};
use crate::seed::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    #[default]
    Finetune,
}

impl Phase {
    fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Finetune => "finetune",
        }
    }
}

/// Position of a run: everything besides parameters and optimizer moments
/// needed to continue it exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub phase: Phase,
    pub epoch_in_phase: u64,
    pub batch_in_epoch: u64,
    pub global_epoch: u64,
    pub global_step: u64,
    pub best_dev_f1: Option<f64>,
    pub best_epoch: Option<u64>,
    pub stale_epochs: u64,
    pub finished: bool,
    pub epoch_loss: f64,
    pub epoch_vad_loss: f64,
    pub epoch_osd_loss: f64,
    pub epoch_windows: u64,
    pub last_lr: f64,
}

/// Corpora of one run. `pretrain` is only used when pretraining epochs are
/// configured.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub pretrain: Option<&'a Corpus>,
    pub train: &'a Corpus,
    pub dev: &'a Corpus,
}

struct PhasePlan {
    windows: Vec<SegmentWindow>,
    curator: BalancedCurator,
    batches_per_epoch: u64,
    epochs: u64,
}

pub struct Trainer<'a> {
    pub identity: RunIdentity,
    pub model: OsdModel,
    pub optimizer: Adam,
    pub state: TrainState,
    /// Parameters of the best dev epoch so far (fine-tuning phase).
    pub best: Option<ParamStore>,
    data: TrainData<'a>,
    plan: PhasePlan,
    speaker_index: BTreeMap<String, usize>,
    jobs: usize,
}

fn speaker_index(data: &TrainData<'_>) -> BTreeMap<String, usize> {
    let mut names: Vec<String> = data.train.speakers();
    if let Some(p) = data.pretrain {
        names.extend(p.speakers());
    }
    names.sort();
    names.dedup();
    names.into_iter().enumerate().map(|(i, n)| (n, i)).collect()
}

impl<'a> Trainer<'a> {
    pub fn new(mut model: ModelConfig, train: TrainConfig, data: TrainData<'a>, jobs: usize) -> Result<Self> {
        train.validate()?;
        let speakers = speaker_index(&data);
        if train.speaker_loss_weight > 0.0 {
            if model.speaker_classes == 0 {
                model.speaker_classes = speakers.len();
            } else if model.speaker_classes < speakers.len() {
                return Err(Error::Config(format!(
                    "model.speaker_classes {} is below the {} training speakers",
                    model.speaker_classes,
                    speakers.len()
                )));
            }
        }
        let mut osd = OsdModel::new(model.clone(), train.variant, derive_seed(train.seed, "init", 0))?;
        if train.freeze_encoder {
            osd.params.freeze_prefix("encoder.");
        }
        let phase = if train.pretrain_epochs > 0 && data.pretrain.is_some() {
            Phase::Pretrain
        } else {
            Phase::Finetune
        };
        let plan = Self::plan(&train, &data, phase)?;
        let optimizer = Adam::new(train.adam(plan.epochs * plan.batches_per_epoch), &osd.params);
        Ok(Self {
            identity: RunIdentity { model, train },
            model: osd,
            optimizer,
            state: TrainState {
                phase,
                ..TrainState::default()
            },
            best: None,
            data,
            plan,
            speaker_index: speakers,
            jobs,
        })
    }

    /// Continues a run from a checkpoint; `best` restores the best-epoch
    /// parameters saved alongside it.
    pub fn resume(ckpt: &Checkpoint, data: TrainData<'a>, best: Option<ParamStore>, jobs: usize) -> Result<Self> {
        let train = ckpt.identity.train.clone();
        let plan = Self::plan(&train, &data, ckpt.state.phase)?;
        Ok(Self {
            identity: ckpt.identity.clone(),
            model: ckpt.model()?,
            optimizer: ckpt.optimizer.clone(),
            state: ckpt.state.clone(),
            best,
            speaker_index: speaker_index(&data),
            data,
            plan,
            jobs,
        })
    }

    fn plan(cfg: &TrainConfig, data: &TrainData<'_>, phase: Phase) -> Result<PhasePlan> {
        let (corpus, epochs) = match phase {
            Phase::Pretrain => (
                data.pretrain
                    .ok_or_else(|| Error::Config("pretraining configured but no pretraining corpus given".into()))?,
                cfg.pretrain_epochs,
            ),
            Phase::Finetune => (data.train, cfg.finetune_epochs),
        };
        let windows: Vec<SegmentWindow> = corpus
            .sessions
            .iter()
            .enumerate()
            .flat_map(|(i, s)| make_windows(&s.id, i, &s.counts, cfg.window_frames(), cfg.hop_frames()))
            .collect();
        let curator = BalancedCurator::new(&windows)?;
        let batches_per_epoch = (3 * curator.quota()).div_ceil(cfg.batch_size) as u64;
        Ok(PhasePlan {
            windows,
            curator,
            batches_per_epoch,
            epochs,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.identity.train
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.plan.batches_per_epoch
    }

    fn phase_corpus(&self) -> &'a Corpus {
        match self.state.phase {
            Phase::Pretrain => self.data.pretrain.expect("checked in plan"),
            Phase::Finetune => self.data.train,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            identity: self.identity.clone(),
            params: self.model.params.clone(),
            optimizer: self.optimizer.clone(),
            state: self.state.clone(),
        }
    }

    /// Model holding the best-epoch parameters (current ones if no epoch
    /// has been evaluated yet).
    pub fn best_model(&self) -> Result<OsdModel> {
        let mut m = self.model.clone();
        if let Some(b) = &self.best {
            install(&mut m.params, b)?;
        }
        Ok(m)
    }

    fn targets(&self, session: &Session, start: usize, len: usize) -> Vec<Option<usize>> {
        session.solo[start..start + len]
            .iter()
            .map(|s| s.and_then(|k| self.speaker_index.get(&session.speakers[k as usize]).copied()))
            .collect()
    }

    /// Forward and backward pass of one window; gradients are added into
    /// the parameter store scaled by `scale`. Returns (loss, vad, osd).
    fn window_step(&mut self, w: &SegmentWindow, scale: f64) -> Result<(f64, f64, f64)> {
        let corpus = self.phase_corpus();
        let session = &corpus.sessions[w.session];
        let (start, len) = (w.start_frame, w.num_frames);
        let fb = session.fbank.slice_rows(start, len)?;
        let feats = session.features.as_ref().map(|f| f.slice_rows(start, len)).transpose()?;
        let input = window_input(session, &fb, start, len, feats.as_ref())?;
        let labels = session.labels.slice(start, len);
        let cfg = &self.identity.train;
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, input, &ForwardOptions::default())?;
        let terms = total_loss(&mut g, &out, &labels, &cfg.loss_weights)?;
        let mut total = terms.total;
        if cfg.speaker_loss_weight > 0.0 {
            if let Some(lp) = out.speaker_log_probs {
                let targets = self.targets(session, start, len);
                if let Some(ce) = speaker_classification_loss(&mut g, lp, &targets)? {
                    let ce = g.scale(ce, cfg.speaker_loss_weight);
                    total = g.add(total, ce)?;
                }
            }
        }
        let loss = g.value(total).get(0, 0);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.state.global_step,
            });
        }
        let grads = g.backward(total);
        g.accumulate_param_grads(&grads, &mut self.model.params, scale);
        Ok((loss, terms.vad, terms.osd))
    }

    /// Runs one optimizer step. At the end of an epoch the dev set is scored
    /// and the epoch's metrics record is returned.
    pub fn train_batch(&mut self) -> Result<Option<MetricsRecord>> {
        if self.state.finished {
            return Ok(None);
        }
        let cfg = self.identity.train.clone();
        let order = self
            .plan
            .curator
            .epoch(derive_seed(cfg.seed, self.state.phase.name(), 0), self.state.epoch_in_phase);
        let batch: Vec<SegmentWindow> = order
            .chunks(cfg.batch_size)
            .nth(self.state.batch_in_epoch as usize)
            .expect("batch index inside epoch")
            .iter()
            .map(|&i| self.plan.windows[i].clone())
            .collect();
        self.model.params.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for w in &batch {
            let (loss, vad, osd) = self.window_step(w, scale)?;
            self.state.epoch_loss += loss;
            self.state.epoch_vad_loss += vad;
            self.state.epoch_osd_loss += osd;
            self.state.epoch_windows += 1;
        }
        self.state.last_lr = self.optimizer.step(&mut self.model.params);
        self.state.global_step += 1;
        self.state.batch_in_epoch += 1;
        if self.state.batch_in_epoch < self.plan.batches_per_epoch {
            return Ok(None);
        }
        self.end_epoch().map(Some)
    }

    pub fn dev_metrics(&self) -> Result<Prf> {
        let c = evaluate_corpus(&self.model, self.data.dev, self.identity.train.threshold, MaskMode::Soft, self.jobs)?;
        Ok(prf(&c.osd))
    }

    fn end_epoch(&mut self) -> Result<MetricsRecord> {
        let dev = self.dev_metrics()?;
        let s = &mut self.state;
        let n = s.epoch_windows.max(1) as f64;
        let rec = MetricsRecord {
            epoch: s.global_epoch,
            step: s.global_step,
            loss: s.epoch_loss / n,
            vad_loss: s.epoch_vad_loss / n,
            osd_loss: s.epoch_osd_loss / n,
            dev_precision: dev.precision,
            dev_recall: dev.recall,
            dev_f1: dev.f1,
            lr: s.last_lr,
        };
        log::info!(
            "{} epoch {} step {} loss {:.4} dev P {:.4} R {:.4} F1 {:.4}",
            s.phase.name(),
            s.epoch_in_phase,
            s.global_step,
            rec.loss,
            dev.precision,
            dev.recall,
            dev.f1
        );
        s.global_epoch += 1;
        s.epoch_in_phase += 1;
        s.batch_in_epoch = 0;
        s.epoch_loss = 0.0;
        s.epoch_vad_loss = 0.0;
        s.epoch_osd_loss = 0.0;
        s.epoch_windows = 0;
        let mut phase_done = s.epoch_in_phase >= self.plan.epochs;
        if s.phase == Phase::Finetune {
            if s.best_dev_f1.is_none_or(|b| dev.f1 > b) {
                s.best_dev_f1 = Some(dev.f1);
                s.best_epoch = Some(rec.epoch);
                s.stale_epochs = 0;
                self.best = Some(self.model.params.clone());
            } else {
                s.stale_epochs += 1;
                if s.stale_epochs >= self.identity.train.patience.max(1) {
                    log::info!("early stop after {} epochs without improvement", s.stale_epochs);
                    phase_done = true;
                }
            }
        }
        if phase_done {
            match self.state.phase {
                Phase::Pretrain => self.start_finetune()?,
                Phase::Finetune => self.state.finished = true,
            }
        }
        Ok(rec)
    }

    /// Switches to the fine-tuning corpus with a fresh optimizer state and
    /// learning-rate schedule.
    fn start_finetune(&mut self) -> Result<()> {
        self.state.phase = Phase::Finetune;
        self.state.epoch_in_phase = 0;
        self.plan = Self::plan(&self.identity.train, &self.data, Phase::Finetune)?;
        self.optimizer = Adam::new(
            self.identity.train.adam(self.plan.epochs * self.plan.batches_per_epoch),
            &self.model.params,
        );
        Ok(())
    }

    /// Trains to completion, calling `on_epoch` after every epoch.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&Trainer<'a>, &MetricsRecord) -> Result<()>) -> Result<Vec<MetricsRecord>> {
        let mut log = Vec::new();
        while !self.state.finished {
            if let Some(rec) = self.train_batch()? {
                on_epoch(self, &rec)?;
                log.push(rec);
            }
        }
        Ok(log)
    }
}

/// Result of a completed run.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub best: OsdModel,
    pub metrics: Vec<MetricsRecord>,
}

fn run_to_end(model: ModelConfig, train: TrainConfig, data: TrainData<'_>, jobs: usize) -> Result<TrainOutcome> {
    let mut t = Trainer::new(model, train, data, jobs)?;
    let metrics = t.run(|_, _| Ok(()))?;
    Ok(TrainOutcome {
        checkpoint: t.checkpoint(),
        best: t.best_model()?,
        metrics,
    })
}

/// Single-phase training of a progressive variant.
pub fn train_progressive(model: ModelConfig, train: TrainConfig, train_set: &Corpus, dev: &Corpus, jobs: usize) -> Result<TrainOutcome> {
    if train.variant.strategy != Strategy::Progressive {
        return Err(Error::Config(format!("{} is not a progressive variant", train.variant)));
    }
    let data = TrainData {
        pretrain: None,
        train: train_set,
        dev,
    };
    run_to_end(model, train, data, jobs)
}

/// Single-phase training of a unified variant.
pub fn train_unified(model: ModelConfig, train: TrainConfig, train_set: &Corpus, dev: &Corpus, jobs: usize) -> Result<TrainOutcome> {
    if train.variant.strategy != Strategy::Unified {
        return Err(Error::Config(format!("{} is not a unified variant", train.variant)));
    }
    let data = TrainData {
        pretrain: None,
        train: train_set,
        dev,
    };
    run_to_end(model, train, data, jobs)
}

/// Pretrains on `pretrain` for `pretrain_epochs`, then fine-tunes on
/// `train` with a fresh optimizer and schedule.
pub fn pretrain_then_finetune(
    model: ModelConfig,
    train: TrainConfig,
    pretrain: Option<&Corpus>,
    train_set: &Corpus,
    dev: &Corpus,
    jobs: usize,
) -> Result<TrainOutcome> {
    if train.pretrain_epochs > 0 && pretrain.is_none() {
        return Err(Error::Config("pretrain_epochs > 0 needs a pretraining corpus".into()));
    }
    run_to_end(
        model,
        train,
        TrainData {
            pretrain,
            train: train_set,
            dev,
        },
        jobs,
    )
}
