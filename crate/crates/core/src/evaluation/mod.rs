//! Frame-level scoring of VAD and OSD tracks, threshold sweeps and report
//! tables.

mod ablation;
mod metrics;
mod report;

pub use ablation::{ablation_matrix, AblationData, AblationEntry, AblationReport, AblationRow, SeedResult, MIN_ABLATION_SEEDS};

pub use metrics::{binarize, f1_score, prf, FrameConfusion, Prf, REFERENCE_THRESHOLD};
pub use report::{delta_table, EvalReport, ReportRow};

use serde::{Deserialize, Serialize};

use crate::corpus::{parallel_map, Corpus, Session};
use crate::error::{Error, Result};
use crate::labeling::{FrameLabelTrack, WINDOW_FRAMES};
use crate::model::{EncoderInput, MaskMode, ModelInput, OsdModel};

/// Per-frame scores for one session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionScores {
    pub vad: Vec<f64>,
    pub osd: Vec<f64>,
}

/// Model input for frames `start..start+len` of a session.
pub fn window_input<'a>(session: &'a Session, fbank: &'a crate::numerics::Tensor2D, start: usize, len: usize, features: Option<&'a crate::numerics::Tensor2D>) -> Result<ModelInput<'a>> {
    let encoder = match features {
        Some(f) => EncoderInput::Features(f),
        None => EncoderInput::Samples(session.waveform.frame_span(start, len)?),
    };
    Ok(ModelInput { encoder, fbank })
}

/// Scores a whole session in consecutive non-overlapping windows; the last
/// window takes the remaining frames.
pub fn score_session(model: &OsdModel, session: &Session, mask: MaskMode) -> Result<SessionScores> {
    let t = session.num_frames();
    let mut out = SessionScores {
        vad: Vec::with_capacity(t),
        osd: Vec::with_capacity(t),
    };
    let mut start = 0;
    while start < t {
        let len = WINDOW_FRAMES.min(t - start);
        let fb = session.fbank.slice_rows(start, len)?;
        let feats = session.features.as_ref().map(|f| f.slice_rows(start, len)).transpose()?;
        let input = window_input(session, &fb, start, len, feats.as_ref())?;
        let (vad, osd) = model.predict(input, mask)?;
        out.vad.extend(vad);
        out.osd.extend(osd);
        start += len;
    }
    Ok(out)
}

pub fn score_corpus(model: &OsdModel, corpus: &Corpus, mask: MaskMode, jobs: usize) -> Result<Vec<SessionScores>> {
    parallel_map(corpus.sessions.len(), jobs, |i| score_session(model, &corpus.sessions[i], mask))
}

/// Micro-averaged confusion counts for both tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfusion {
    pub vad: FrameConfusion,
    pub osd: FrameConfusion,
}

impl CorpusConfusion {
    pub fn merge(&mut self, other: &CorpusConfusion) {
        self.vad.merge(&other.vad);
        self.osd.merge(&other.osd);
    }
}

/// Confusion of one session's scores against its fuzzy labels. OSD is
/// scored over every frame, not only reference speech.
pub fn session_confusion(scores: &SessionScores, labels: &FrameLabelTrack, threshold: f64) -> Result<CorpusConfusion> {
    let refs = |track: &[f64]| binarize(track, REFERENCE_THRESHOLD);
    Ok(CorpusConfusion {
        vad: FrameConfusion::from_tracks(&binarize(&scores.vad, threshold)?, &refs(&labels.vad)?)?,
        osd: FrameConfusion::from_tracks(&binarize(&scores.osd, threshold)?, &refs(&labels.osd)?)?,
    })
}

pub fn accumulate(scores: &[SessionScores], labels: &[&FrameLabelTrack], threshold: f64) -> Result<CorpusConfusion> {
    if scores.is_empty() {
        return Err(Error::Config("nothing to evaluate: empty corpus".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Alignment {
            what: "evaluated sessions",
            expected: labels.len(),
            got: scores.len(),
        });
    }
    let mut total = CorpusConfusion::default();
    for (s, l) in scores.iter().zip(labels) {
        total.merge(&session_confusion(s, l, threshold)?);
    }
    Ok(total)
}

pub fn evaluate_corpus(model: &OsdModel, corpus: &Corpus, threshold: f64, mask: MaskMode, jobs: usize) -> Result<CorpusConfusion> {
    if corpus.sessions.is_empty() {
        return Err(Error::Config("nothing to evaluate: empty corpus".into()));
    }
    binarize(&[], threshold)?;
    let scores = score_corpus(model, corpus, mask, jobs)?;
    let labels: Vec<&FrameLabelTrack> = corpus.sessions.iter().map(|s| &s.labels).collect();
    accumulate(&scores, &labels, threshold)
}

/// Thresholds 0.1, 0.2, …, 0.9.
pub fn sweep_thresholds() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub confusion: CorpusConfusion,
    pub osd: Prf,
    pub vad: Prf,
}

pub fn sweep(scores: &[SessionScores], labels: &[&FrameLabelTrack], thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    thresholds
        .iter()
        .map(|&th| {
            let c = accumulate(scores, labels, th)?;
            Ok(SweepRow {
                threshold: th,
                confusion: c,
                osd: prf(&c.osd),
                vad: prf(&c.vad),
            })
        })
        .collect()
}

/// Threshold with the best OSD F1 (the lower one on ties).
pub fn best_threshold(rows: &[SweepRow]) -> Option<f64> {
    rows.iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.osd.f1 >= r.osd.f1 => Some(b),
            _ => Some(r),
        })
        .map(|r| r.threshold)
}
