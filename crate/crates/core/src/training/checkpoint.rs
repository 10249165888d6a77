//! `OSDC` checkpoints: magic, version byte, then length-prefixed sections
//! (u32 little-endian lengths): resolved config JSON, config hash, named
//! parameter blobs (`name len, name, trainable, rows, cols, f64 payload`),
//! optimizer state (step, horizon, both moments as f64) and the trainer
//! state JSON that carries the seed and data cursor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, OsdModel};
use crate::numerics::{Adam, ParamStore, Tensor2D};
use crate::seed::short_hash;

const MAGIC: &[u8; 4] = b"OSDC";
const VERSION: u8 = 1;

/// Everything that identifies a run's configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunIdentity {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunIdentity {
    pub fn hash(&self) -> String {
        short_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub identity: RunIdentity,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        self.identity.hash()
    }

    /// Rebuilds the model structure and installs the stored parameters.
    pub fn model(&self) -> Result<OsdModel> {
        let mut m = OsdModel::new(self.identity.model.clone(), self.identity.train.variant, 0)?;
        install(&mut m.params, &self.params)?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.push(VERSION);
        w.blob(serde_json::to_string(&self.identity)?.as_bytes());
        w.blob(self.config_hash().as_bytes());
        w.u32(self.params.len() as u32);
        for (_, p) in self.params.iter() {
            w.blob(p.name.as_bytes());
            w.0.push(u8::from(p.trainable));
            w.tensor(&p.value);
        }
        w.u64(self.optimizer.step);
        w.u64(self.optimizer.config.total_steps);
        for (m, v) in self.optimizer.first_moment.iter().zip(&self.optimizer.second_moment) {
            w.tensor(m);
            w.tensor(v);
        }
        w.blob(serde_json::to_string(&self.state)?.as_bytes());
        Ok(w.0)
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "missing OSDC magic"));
        }
        let version = r.take(1)?[0];
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported version {version}")));
        }
        let identity: RunIdentity = serde_json::from_slice(r.blob()?)?;
        let hash = String::from_utf8_lossy(r.blob()?).into_owned();
        if hash != identity.hash() {
            return Err(Error::format(origin, format!("config hash {hash} does not match its config")));
        }
        let n = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name = String::from_utf8(r.blob()?.to_vec()).map_err(|e| Error::format(origin, e))?;
            let trainable = r.take(1)?[0] != 0;
            let id = params.add(name, r.tensor()?);
            params.get_mut(id).trainable = trainable;
        }
        let step = r.u64()?;
        let total_steps = r.u64()?;
        let mut optimizer = Adam::new(identity.train.adam(total_steps), &params);
        optimizer.step = step;
        for i in 0..n {
            optimizer.first_moment[i] = r.tensor()?;
            optimizer.second_moment[i] = r.tensor()?;
        }
        let state: TrainState = serde_json::from_slice(r.blob()?)?;
        if r.at != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after trainer state"));
        }
        Ok(Self {
            identity,
            params,
            optimizer,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, &path.display().to_string())
    }
}

/// Copies values and trainable flags from `src` into `dst`, which must
/// have the same names and shapes in the same order.
pub fn install(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} parameters, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for (p, (_, q)) in dst.iter_mut().zip(src.iter()) {
        if p.name != q.name || p.value.shape() != q.value.shape() {
            return Err(Error::Config(format!(
                "parameter mismatch: model has {} {}, checkpoint has {} {}",
                p.name,
                p.value.shape(),
                q.name,
                q.value.shape()
            )));
        }
        p.value = q.value.clone();
        p.trainable = q.trainable;
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn blob(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor2D) {
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        for v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::format(self.origin, format!("truncated at byte {}", self.at))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<Tensor2D> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).unwrap_or(usize::MAX))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor2D::from_vec(rows, cols, data)
    }
}
