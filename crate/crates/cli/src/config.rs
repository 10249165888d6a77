use std::fs;
use std::path::Path;

use osd_core::audio::MixSpec;
use osd_core::corpus::CorpusSpec;
use osd_core::model::ModelConfig;
use osd_core::seed::short_hash;
use osd_core::training::TrainConfig;
use osd_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub sessions: usize,
    pub mix: MixSpec,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            sessions: 10,
            mix: MixSpec::default(),
        }
    }
}

impl DataSection {
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            sessions: self.sessions,
            mix: self.mix.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub sweep: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            sweep: false,
        }
    }
}

/// The `--config` JSON document. Missing keys take their defaults,
/// unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.data.corpus_spec().validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::Config(format!("eval.threshold must be in (0,1), got {}", self.eval.threshold)));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        short_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Writes the resolved configuration next to a command's outputs.
    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        let doc = serde_json::json!({ "config_hash": self.hash(), "config": self });
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }
}
