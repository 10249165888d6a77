mod common;

use common::{count_oracle, tiny_corpus, PUBLISHED_F1_TOL, PUBLISHED_ROWS};
use osd_core::evaluation::{
    accumulate, binarize, evaluate_corpus, f1_score, prf, score_corpus, sweep, sweep_thresholds, FrameConfusion,
    SessionScores,
};
use osd_core::labeling::FrameLabelTrack;
use osd_core::model::{MaskMode, ModelConfig, OsdModel};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn as_array(c: &FrameConfusion) -> [u64; 4] {
    [c.true_positive, c.false_positive, c.false_negative, c.true_negative]
}

fn random_session(rng: &mut ChaCha8Rng) -> (SessionScores, FrameLabelTrack) {
    let t = rng.random_range(1..500);
    let counts: Vec<u32> = {
        let mut v = Vec::with_capacity(t);
        while v.len() < t {
            let c = rng.random_range(0..3);
            v.extend(std::iter::repeat_n(c, rng.random_range(1..60)));
        }
        v.truncate(t);
        v
    };
    let scores = SessionScores {
        vad: (0..t).map(|_| rng.random_range(0.0..1.0)).collect(),
        osd: (0..t).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    (scores, FrameLabelTrack::from_counts(&counts))
}

#[test]
fn published_rows_are_internally_consistent() {
    for (name, r, p, f1) in PUBLISHED_ROWS {
        let got = 100.0 * f1_score(p / 100.0, r / 100.0);
        assert!((got - f1).abs() <= PUBLISHED_F1_TOL, "{name}: {got:.4} vs {f1}");
    }
}

#[test]
fn accumulation_matches_brute_force_on_100_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for pair in 0..100 {
        let n = rng.random_range(1..5);
        let sessions: Vec<_> = (0..n).map(|_| random_session(&mut rng)).collect();
        let th = rng.random_range(1..10) as f64 / 10.0;
        let scores: Vec<SessionScores> = sessions.iter().map(|s| s.0.clone()).collect();
        let labels: Vec<&FrameLabelTrack> = sessions.iter().map(|s| &s.1).collect();
        let got = accumulate(&scores, &labels, th).unwrap();
        let mut vad = [0u64; 4];
        let mut osd = [0u64; 4];
        for (s, l) in &sessions {
            let a = count_oracle(&s.vad, &l.vad, th);
            let b = count_oracle(&s.osd, &l.osd, th);
            (0..4).for_each(|k| {
                vad[k] += a[k];
                osd[k] += b[k];
            });
        }
        assert_eq!(as_array(&got.vad), vad, "pair {pair}");
        assert_eq!(as_array(&got.osd), osd, "pair {pair}");
        let p = prf(&got.osd);
        let (tp, fp, fn_) = (osd[0] as f64, osd[1] as f64, osd[2] as f64);
        if tp > 0.0 {
            assert_eq!(p.precision, tp / (tp + fp));
            assert_eq!(p.recall, tp / (tp + fn_));
        }
    }
}

#[test]
fn evaluate_corpus_matches_oracle_on_model_scores() {
    let corpus = tiny_corpus("eval", 3, 3);
    let model = OsdModel::new(ModelConfig::miniature(), "p-OSD-spkAtt".parse().unwrap(), 4).unwrap();
    let scores = score_corpus(&model, &corpus, MaskMode::Soft, 2).unwrap();
    for th in [0.3, 0.5, 0.7] {
        let c = evaluate_corpus(&model, &corpus, th, MaskMode::Soft, 2).unwrap();
        let mut osd = [0u64; 4];
        for (s, sess) in scores.iter().zip(&corpus.sessions) {
            assert_eq!(s.osd.len(), sess.num_frames());
            let a = count_oracle(&s.osd, &sess.labels.osd, th);
            (0..4).for_each(|k| osd[k] += a[k]);
        }
        assert_eq!(as_array(&c.osd), osd);
        assert_eq!(c.osd.total() as usize, corpus.sessions.iter().map(|s| s.num_frames()).sum::<usize>());
    }
}

#[test]
fn order_and_concatenation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sessions: Vec<_> = (0..6).map(|_| random_session(&mut rng)).collect();
    let scores: Vec<SessionScores> = sessions.iter().map(|s| s.0.clone()).collect();
    let labels: Vec<&FrameLabelTrack> = sessions.iter().map(|s| &s.1).collect();
    let base = accumulate(&scores, &labels, 0.5).unwrap();

    let mut order: Vec<usize> = (0..6).collect();
    order.shuffle(&mut rng);
    let s2: Vec<SessionScores> = order.iter().map(|&i| scores[i].clone()).collect();
    let l2: Vec<&FrameLabelTrack> = order.iter().map(|&i| labels[i]).collect();
    assert_eq!(accumulate(&s2, &l2, 0.5).unwrap(), base);

    let cat_scores = SessionScores {
        vad: scores.iter().flat_map(|s| s.vad.clone()).collect(),
        osd: scores.iter().flat_map(|s| s.osd.clone()).collect(),
    };
    let cat_labels = FrameLabelTrack {
        vad: labels.iter().flat_map(|l| l.vad.clone()).collect(),
        osd: labels.iter().flat_map(|l| l.osd.clone()).collect(),
    };
    assert_eq!(accumulate(&[cat_scores], &[&cat_labels], 0.5).unwrap(), base);
}

#[test]
fn sweep_has_one_row_per_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (s, l) = random_session(&mut rng);
    let rows = sweep(&[s], &[&l], &sweep_thresholds()).unwrap();
    assert_eq!(rows.len(), 9);
    assert_eq!(rows[4].threshold, 0.5);
}

#[test]
fn empty_inputs_and_bad_thresholds_are_errors() {
    assert!(accumulate(&[], &[], 0.5).is_err());
    assert!(binarize(&[0.2], 0.0).is_err());
    assert!(binarize(&[0.2], 1.0).is_err());
    assert_eq!(binarize(&[0.5, 0.49], 0.5).unwrap(), vec![true, false]);
}

proptest! {
    #[test]
    fn swapping_roles_swaps_precision_and_recall(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..400)
    ) {
        let h: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let r: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let a = prf(&FrameConfusion::from_tracks(&h, &r).unwrap());
        let b = prf(&FrameConfusion::from_tracks(&r, &h).unwrap());
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-12);
    }

    #[test]
    fn binarize_is_idempotent(scores in prop::collection::vec(0.0f64..1.0, 0..200), th in 0.01f64..0.99) {
        let once: Vec<f64> = binarize(&scores, th).unwrap().into_iter().map(|b| b as u8 as f64).collect();
        let twice: Vec<f64> = binarize(&once, th).unwrap().into_iter().map(|b| b as u8 as f64).collect();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn counts_sum_to_frames(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..400)) {
        let h: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let r: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(FrameConfusion::from_tracks(&h, &r).unwrap().total() as usize, pairs.len());
    }
}
