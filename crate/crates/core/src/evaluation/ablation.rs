use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{evaluate_corpus, prf, CorpusConfusion, ReportRow};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{MaskMode, ModelConfig};
use crate::training::{pretrain_then_finetune, TrainConfig};

/// One configuration of an ablation. Without an explicit name the row is
/// named after the variant and encoder, e.g. `p-OSD-xlsr-spkAtt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationEntry {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl AblationEntry {
    pub fn row_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.train.variant.name_with_encoder(self.model.encoder_tag()))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AblationData<'a> {
    pub pretrain: Option<&'a Corpus>,
    pub train: &'a Corpus,
    pub dev: &'a Corpus,
    /// Corpus the rows are scored on.
    pub test: &'a Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub confusion: CorpusConfusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// OSD metrics of the confusion pooled over all seeds.
    pub row: ReportRow,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub corpus_id: String,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn report_rows(&self) -> Vec<ReportRow> {
        self.rows.iter().map(|r| r.row.clone()).collect()
    }
}

pub const MIN_ABLATION_SEEDS: usize = 3;

/// Trains every entry once per seed and scores the best-epoch model on the
/// test corpus. Each row pools the confusion counts of its seeds, so its F1
/// stays the harmonic mean of its own precision and recall.
pub fn ablation_matrix(
    entries: &[AblationEntry],
    seeds: &[u64],
    data: AblationData<'_>,
    threshold: f64,
    jobs: usize,
) -> Result<AblationReport> {
    if entries.len() < 2 {
        return Err(Error::Config(format!("an ablation needs at least 2 configs, got {}", entries.len())));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() < MIN_ABLATION_SEEDS || distinct.len() != seeds.len() {
        return Err(Error::Config(format!(
            "an ablation needs at least {MIN_ABLATION_SEEDS} distinct seeds, got {seeds:?}"
        )));
    }
    let mut names = BTreeSet::new();
    for e in entries {
        if !names.insert(e.row_name()) {
            return Err(Error::Config(format!("duplicate ablation row name `{}`", e.row_name())));
        }
        e.model.validate()?;
        e.train.validate()?;
    }
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let name = e.row_name();
        let mut pooled = CorpusConfusion::default();
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let train = TrainConfig { seed, ..e.train.clone() };
            let out = pretrain_then_finetune(e.model.clone(), train, data.pretrain, data.train, data.dev, jobs)?;
            let c = evaluate_corpus(&out.best, data.test, threshold, MaskMode::Soft, jobs)?;
            log::info!("{name} seed {seed}: OSD F1 {:.4}", prf(&c.osd).f1);
            pooled.merge(&c);
            per_seed.push(SeedResult { seed, confusion: c });
        }
        rows.push(AblationRow {
            row: ReportRow::from_prf(name, &prf(&pooled.osd)),
            per_seed,
        });
    }
    Ok(AblationReport {
        corpus_id: data.test.id.clone(),
        threshold,
        seeds: seeds.to_vec(),
        rows,
    })
}
