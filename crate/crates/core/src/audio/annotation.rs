use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub onset: f64,
    pub duration: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    /// Half-open activity test `[onset, onset + duration)`.
    pub fn active_at(&self, t: f64) -> bool {
        t >= self.onset && t < self.end()
    }
}

/// Per-speaker speech intervals for one session.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentAnnotation {
    pub entries: Vec<Segment>,
}

impl SegmentAnnotation {
    pub fn new(entries: Vec<Segment>) -> Self {
        Self { entries }
    }

    /// Checks onsets, durations and per-speaker non-overlap.
    pub fn validate(&self) -> Result<()> {
        for s in &self.entries {
            if !(s.onset >= 0.0) || !(s.duration > 0.0) {
                return Err(Error::Domain(format!(
                    "segment of {} has onset {} and duration {}",
                    s.speaker, s.onset, s.duration
                )));
            }
        }
        for spk in self.speakers() {
            let mut mine: Vec<&Segment> = self.entries.iter().filter(|s| s.speaker == spk).collect();
            mine.sort_by(|a, b| a.onset.total_cmp(&b.onset));
            for w in mine.windows(2) {
                if w[1].onset < w[0].end() - 1e-9 {
                    return Err(Error::Domain(format!(
                        "speaker {spk} has overlapping segments at {:.3}s",
                        w[1].onset
                    )));
                }
            }
        }
        Ok(())
    }

    /// Distinct speaker labels, sorted.
    pub fn speakers(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.iter().map(|s| s.speaker.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn end_time(&self) -> f64 {
        self.entries.iter().map(Segment::end).fold(0.0, f64::max)
    }

    /// Exact `(speech seconds, overlap seconds)` by an event sweep, where
    /// speech means at least one speaker and overlap at least two.
    pub fn speech_and_overlap_seconds(&self) -> (f64, f64) {
        let mut events: Vec<(f64, i32)> = Vec::with_capacity(self.entries.len() * 2);
        for s in &self.entries {
            events.push((s.onset, 1));
            events.push((s.end(), -1));
        }
        // ends before starts at equal times keep the intervals half-open
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut speech, mut overlap) = (0.0, 0.0);
        let mut active = 0;
        let mut last = 0.0;
        for (t, d) in events {
            let span = t - last;
            if active >= 1 {
                speech += span;
            }
            if active >= 2 {
                overlap += span;
            }
            active += d;
            last = t;
        }
        (speech, overlap)
    }

    /// RTTM text, one `SPEAKER` line per segment with 3-decimal times.
    pub fn to_rttm(&self, session_id: &str) -> String {
        let mut out = String::new();
        for s in &self.entries {
            let _ = writeln!(
                out,
                "SPEAKER {session_id} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                s.onset, s.duration, s.speaker
            );
        }
        out
    }

    pub fn from_rttm(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() < 8 || f[0] != "SPEAKER" {
                return Err(Error::format("rttm", format!("line {}: malformed `{line}`", n + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::format("rttm", format!("line {}: {e}", n + 1)))
            };
            entries.push(Segment {
                speaker: f[7].to_string(),
                onset: num(f[3])?,
                duration: num(f[4])?,
            });
        }
        let ann = Self { entries };
        ann.validate()?;
        Ok(ann)
    }
}
