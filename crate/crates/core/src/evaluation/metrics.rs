use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1` iff `score ≥ threshold`.
pub fn binarize(scores: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0,1), got {threshold}")));
    }
    Ok(scores.iter().map(|&s| s >= threshold).collect())
}

/// Decision threshold applied to fuzzy reference labels before scoring.
pub const REFERENCE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameConfusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

impl FrameConfusion {
    pub fn from_tracks(hypothesis: &[bool], reference: &[bool]) -> Result<Self> {
        if hypothesis.len() != reference.len() {
            return Err(Error::Alignment {
                what: "confusion tracks",
                expected: reference.len(),
                got: hypothesis.len(),
            });
        }
        let mut c = Self::default();
        for (&h, &r) in hypothesis.iter().zip(reference) {
            match (h, r) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => c.true_negative += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: &FrameConfusion) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.false_negative += other.false_negative;
        self.true_negative += other.true_negative;
    }

    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    /// Hypothesis and reference exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            false_positive: self.false_negative,
            false_negative: self.false_positive,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when neither reference nor hypothesis has a positive frame.
    pub no_positives: bool,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn prf(c: &FrameConfusion) -> Prf {
    let tp = c.true_positive as f64;
    let precision = if c.true_positive + c.false_positive == 0 {
        0.0
    } else {
        tp / (tp + c.false_positive as f64)
    };
    let recall = if c.true_positive + c.false_negative == 0 {
        0.0
    } else {
        tp / (tp + c.false_negative as f64)
    };
    let no_positives = c.true_positive + c.false_positive + c.false_negative == 0;
    if no_positives {
        log::warn!("no positive frames in reference or hypothesis; reporting zeros");
    }
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
        no_positives,
    }
}
