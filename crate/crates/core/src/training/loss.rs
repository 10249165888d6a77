use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::FrameLabelTrack;
use crate::model::ForwardOutput;
use crate::numerics::{Graph, Tensor2D, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub vad: f64,
    pub osd: f64,
    /// Weight of the speaker-MSE alignment term (spkMSE fusion only).
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            vad: 1.0,
            osd: 1.0,
            aux: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("vad", self.vad), ("osd", self.osd), ("aux", self.aux)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// The scalar loss node plus the values of its unweighted parts.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub vad: f64,
    pub osd: f64,
    pub aux: Option<f64>,
}

/// `λ_vad·L_vad + λ_osd·L_osd (+ λ_aux·L_aux)`, each `L` a mean squared
/// error over frames against the fuzzy targets.
pub fn total_loss(g: &mut Graph, out: &ForwardOutput, labels: &FrameLabelTrack, weights: &LossWeights) -> Result<LossTerms> {
    let t = g.shape(out.vad).0;
    if labels.len() != t || labels.osd.len() != t {
        return Err(Error::shape("total_loss", format!("{t} scores"), format!("{} labels", labels.len())));
    }
    let y_vad = g.input(Tensor2D::column(&labels.vad));
    let y_osd = g.input(Tensor2D::column(&labels.osd));
    let l_vad = g.mse_loss(out.vad, y_vad)?;
    let l_osd = g.mse_loss(out.osd, y_osd)?;
    let a = g.scale(l_vad, weights.vad);
    let b = g.scale(l_osd, weights.osd);
    let mut total = g.add(a, b)?;
    let aux = match out.aux {
        Some(l_aux) => {
            let c = g.scale(l_aux, weights.aux);
            total = g.add(total, c)?;
            Some(g.value(l_aux).get(0, 0))
        }
        None => None,
    };
    Ok(LossTerms {
        total,
        vad: g.value(l_vad).get(0, 0),
        osd: g.value(l_osd).get(0, 0),
        aux,
    })
}

/// Mean negative log-likelihood of the target class over frames that have
/// one; `None` when no frame has a target.
pub fn speaker_classification_loss(g: &mut Graph, log_probs: Var, targets: &[Option<usize>]) -> Result<Option<Var>> {
    let (t, c) = (g.shape(log_probs).0, g.shape(log_probs).1);
    if targets.len() != t {
        return Err(Error::shape("speaker_classification_loss", g.shape(log_probs), format!("{} targets", targets.len())));
    }
    let mut pick = Tensor2D::zeros(t, c);
    let mut n = 0usize;
    for (i, tg) in targets.iter().enumerate() {
        if let Some(k) = *tg {
            if k >= c {
                return Err(Error::Config(format!("speaker class {k} outside classifier width {c}")));
            }
            pick.set(i, k, 1.0);
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    let pick = g.input(pick);
    let chosen = g.mul(log_probs, pick)?;
    let s = g.sum_all(chosen);
    Ok(Some(g.scale(s, -1.0 / n as f64)))
}
