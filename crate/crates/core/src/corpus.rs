//! Sessions with precomputed Fbank, labels and per-frame speaker identity,
//! grouped into corpora loaded from disk or synthesized in memory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::io::{read_manifest, read_rttm, read_wav, write_manifest, write_rttm, write_wav, ManifestEntry};
use crate::audio::{fbank, mix_session, MixSpec, SegmentAnnotation, Waveform};
use crate::error::{Error, Result};
use crate::labeling::{rasterize, FrameLabelTrack};
use crate::model::read_osdf;
use crate::numerics::Tensor2D;
use crate::seed::derive_seed;

#[derive(Clone, Debug)]
pub struct Session {
    pub id: String,
    pub waveform: Waveform,
    pub annotation: SegmentAnnotation,
    pub fbank: Tensor2D,
    /// Active speakers per frame.
    pub counts: Vec<u32>,
    pub labels: FrameLabelTrack,
    /// Speakers of this session, sorted.
    pub speakers: Vec<String>,
    /// Index into `speakers` for frames with exactly one active speaker.
    pub solo: Vec<Option<u16>>,
    /// Precomputed encoder features for the ingested-encoder path.
    pub features: Option<Tensor2D>,
}

impl Session {
    pub fn new(waveform: Waveform, annotation: SegmentAnnotation) -> Result<Self> {
        annotation.validate()?;
        let fbank = fbank(&waveform)?;
        let t = fbank.rows();
        let counts = rasterize(&annotation, t);
        let labels = FrameLabelTrack::from_counts(&counts);
        let speakers = annotation.speakers();
        let mut solo = vec![None; t];
        for (k, name) in speakers.iter().enumerate() {
            let own = SegmentAnnotation::new(annotation.entries.iter().filter(|s| &s.speaker == name).cloned().collect());
            for (i, c) in rasterize(&own, t).into_iter().enumerate() {
                if c > 0 && counts[i] == 1 {
                    solo[i] = Some(k as u16);
                }
            }
        }
        Ok(Self {
            id: waveform.id.clone(),
            waveform,
            annotation,
            fbank,
            counts,
            labels,
            speakers,
            solo,
            features: None,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.counts.len()
    }

    /// Attaches ingested encoder features; the frame count must match.
    pub fn with_features(mut self, features: Tensor2D) -> Result<Self> {
        if features.rows() != self.num_frames() {
            return Err(Error::Alignment {
                what: "ingested features",
                expected: self.num_frames(),
                got: features.rows(),
            });
        }
        self.features = Some(features);
        Ok(self)
    }
}

/// A set of sessions generated from one mixer template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub sessions: usize,
    /// Template; each session gets its own seed derived from `mix.seed`.
    pub mix: MixSpec,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 {
            return Err(Error::Config("corpus needs at least one session".into()));
        }
        self.mix.validate()
    }

    pub fn session_spec(&self, index: usize) -> MixSpec {
        MixSpec {
            seed: derive_seed(self.mix.seed, "session", index as u64),
            ..self.mix.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub id: String,
    pub sessions: Vec<Session>,
}

/// Runs `f` over `0..n` on up to `jobs` threads, keeping output order.
pub fn parallel_map<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        for (w, chunk) in slots.chunks_mut(n.div_ceil(jobs)).enumerate() {
            let base = w * n.div_ceil(jobs);
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(base + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

impl Corpus {
    pub fn synthesize(id: impl Into<String>, spec: &CorpusSpec, jobs: usize) -> Result<Self> {
        spec.validate()?;
        let sessions = parallel_map(spec.sessions, jobs, |i| {
            let (wav, ann) = mix_session(&spec.session_spec(i))?;
            Session::new(wav, ann)
        })?;
        Ok(Self { id: id.into(), sessions })
    }

    /// Loads every manifest entry. With `features_dir`, each session also
    /// reads `<features_dir>/<session id>.osdf`.
    pub fn load(manifest: &Path, features_dir: Option<&Path>) -> Result<Self> {
        let entries = read_manifest(manifest)?;
        if entries.is_empty() {
            return Err(Error::Config(format!("manifest {} has no sessions", manifest.display())));
        }
        let sessions = entries
            .iter()
            .map(|e| {
                let mut wav = read_wav(&e.audio_path)?;
                wav.id = e.session_id();
                let s = Session::new(wav, read_rttm(&e.rttm_path)?)?;
                match features_dir {
                    Some(dir) => s.with_features(read_osdf(&dir.join(format!("{}.osdf", e.session_id())))?.features),
                    None => Ok(s),
                }
            })
            .collect::<Result<_>>()?;
        let id = manifest
            .parent()
            .and_then(|p| p.file_name())
            .map_or_else(|| "corpus".to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self { id, sessions })
    }

    /// Writes `<id>.wav`, `<id>.rttm` per session and `manifest.jsonl`
    /// with paths relative to `dir`. Returns the manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.sessions.len());
        for s in &self.sessions {
            let wav = PathBuf::from(format!("{}.wav", s.id));
            let rttm = PathBuf::from(format!("{}.rttm", s.id));
            write_wav(&dir.join(&wav), &s.waveform)?;
            write_rttm(&dir.join(&rttm), &s.id, &s.annotation)?;
            entries.push(ManifestEntry {
                audio_path: wav,
                rttm_path: rttm,
                duration_seconds: s.waveform.duration_seconds(),
            });
        }
        let path = dir.join("manifest.jsonl");
        write_manifest(&path, &entries)?;
        Ok(path)
    }

    pub fn total_seconds(&self) -> f64 {
        self.sessions.iter().map(|s| s.waveform.duration_seconds()).sum()
    }

    /// Realized overlap ratio over all sessions, from the annotations.
    pub fn overlap_ratio(&self) -> f64 {
        let (speech, overlap) = self
            .sessions
            .iter()
            .map(|s| s.annotation.speech_and_overlap_seconds())
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        if speech > 0.0 {
            overlap / speech
        } else {
            0.0
        }
    }

    /// Global sorted speaker list across sessions.
    pub fn speakers(&self) -> Vec<String> {
        let mut all: Vec<String> = self.sessions.iter().flat_map(|s| s.speakers.iter().cloned()).collect();
        all.sort();
        all.dedup();
        all
    }

    /// Splits off the last `n` sessions as a second corpus.
    pub fn split_tail(mut self, n: usize, tail_id: impl Into<String>) -> Result<(Self, Self)> {
        if n == 0 || n >= self.sessions.len() {
            return Err(Error::Config(format!(
                "cannot hold out {n} of {} sessions",
                self.sessions.len()
            )));
        }
        let tail = self.sessions.split_off(self.sessions.len() - n);
        Ok((
            self,
            Corpus {
                id: tail_id.into(),
                sessions: tail,
            },
        ))
    }
}
