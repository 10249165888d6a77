use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameClass {
    Silence,
    Single,
    Overlap,
}

impl FrameClass {
    pub const ALL: [FrameClass; 3] = [FrameClass::Silence, FrameClass::Single, FrameClass::Overlap];

    pub fn from_count(count: u32) -> Self {
        match count {
            0 => FrameClass::Silence,
            1 => FrameClass::Single,
            _ => FrameClass::Overlap,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameClass::Silence => "silence",
            FrameClass::Single => "single",
            FrameClass::Overlap => "overlap",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// A fixed-length slice of one session's frame grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentWindow {
    pub session_id: String,
    /// Index of the session inside its corpus.
    pub session: usize,
    pub start_frame: usize,
    pub num_frames: usize,
    pub class_tag: FrameClass,
}

/// `[silence, single, overlap]` frame counts.
pub fn frame_class_histogram(counts: &[u32]) -> [usize; 3] {
    let mut h = [0; 3];
    for &c in counts {
        h[FrameClass::from_count(c).index()] += 1;
    }
    h
}

/// Majority class of the frames; ties go to the rarer class
/// (overlap over single over silence).
pub fn window_class(counts: &[u32]) -> FrameClass {
    let h = frame_class_histogram(counts);
    let mut best = FrameClass::Overlap;
    for class in [FrameClass::Single, FrameClass::Silence] {
        if h[class.index()] > h[best.index()] {
            best = class;
        }
    }
    best
}

/// Cuts a session into windows of `len` frames every `hop` frames. Only
/// windows lying fully inside the session are produced.
pub fn make_windows(session_id: &str, session: usize, counts: &[u32], len: usize, hop: usize) -> Vec<SegmentWindow> {
    let hop = hop.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + len <= counts.len() {
        out.push(SegmentWindow {
            session_id: session_id.to_string(),
            session,
            start_frame: start,
            num_frames: len,
            class_tag: window_class(&counts[start..start + len]),
        });
        start += hop;
    }
    out
}

/// Equal-count sampling of silence, single and overlap windows.
///
/// Every epoch draws `min class size` windows per class, without
/// replacement. Within a class, epochs walk through a seeded permutation so
/// each window is visited once per `ceil(N / quota)` epochs.
#[derive(Clone, Debug)]
pub struct BalancedCurator {
    by_class: [Vec<usize>; 3],
    quota: usize,
}

impl BalancedCurator {
    pub fn new(windows: &[SegmentWindow]) -> Result<Self> {
        let mut by_class: [Vec<usize>; 3] = Default::default();
        for (i, w) in windows.iter().enumerate() {
            by_class[w.class_tag.index()].push(i);
        }
        for class in FrameClass::ALL {
            if by_class[class.index()].is_empty() {
                return Err(Error::Curation { missing: class.name() });
            }
        }
        let quota = by_class.iter().map(Vec::len).min().unwrap_or(0);
        Ok(Self { by_class, quota })
    }

    /// Windows drawn per class per epoch.
    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn class_sizes(&self) -> [usize; 3] {
        [self.by_class[0].len(), self.by_class[1].len(), self.by_class[2].len()]
    }

    /// Indices into the original window list for `epoch`, shuffled.
    pub fn epoch(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.quota * 3);
        for (ci, members) in self.by_class.iter().enumerate() {
            let n = members.len();
            let epochs_per_cycle = n.div_ceil(self.quota) as u64;
            let cycle = epoch / epochs_per_cycle;
            let pos = (epoch % epochs_per_cycle) as usize * self.quota;
            let mut perm = members.clone();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, ci as u64, cycle)));
            // the last epoch of a cycle wraps to the start of the same permutation
            out.extend((0..self.quota).map(|k| perm[(pos + k) % n]));
        }
        out.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(seed, 3, epoch)));
        out
    }
}

fn derive(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(17)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(n_sil: usize, n_single: usize, n_ovl: usize) -> Vec<SegmentWindow> {
        let mut out = Vec::new();
        for (class, n) in [(FrameClass::Silence, n_sil), (FrameClass::Single, n_single), (FrameClass::Overlap, n_ovl)] {
            for i in 0..n {
                out.push(SegmentWindow {
                    session_id: "s".into(),
                    session: 0,
                    start_frame: i,
                    num_frames: 250,
                    class_tag: class,
                });
            }
        }
        out
    }

    #[test]
    fn min_count_rule() {
        let w = windows(100, 50, 10);
        let c = BalancedCurator::new(&w).unwrap();
        let e = c.epoch(7, 0);
        assert_eq!(e.len(), 30);
        for class in FrameClass::ALL {
            assert_eq!(e.iter().filter(|&&i| w[i].class_tag == class).count(), 10);
        }
        let mut sorted = e.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 30);
    }

    #[test]
    fn equal_classes_keep_everything() {
        let w = windows(5, 5, 5);
        let mut e = BalancedCurator::new(&w).unwrap().epoch(1, 3);
        e.sort();
        assert_eq!(e, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn missing_class_is_named() {
        let err = BalancedCurator::new(&windows(3, 0, 2)).unwrap_err();
        assert!(matches!(err, Error::Curation { missing: "single" }));
    }

    #[test]
    fn tie_breaks_toward_rarer_class() {
        assert_eq!(window_class(&[0, 0, 2, 2]), FrameClass::Overlap);
        assert_eq!(window_class(&[0, 0, 1, 1]), FrameClass::Single);
        assert_eq!(window_class(&[0, 0, 0, 1, 3]), FrameClass::Silence);
    }
}
