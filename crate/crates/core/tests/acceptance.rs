//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p osd-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{
    brute_force_fuzzy, count_oracle, operator_suite, pipeline_check, random_sticky_track, tiny_corpus, tiny_train,
    GRAD_TOL, PUBLISHED_F1_TOL, PUBLISHED_ROWS, PIPELINE_VARIANTS,
};
use osd_core::audio::{dbfs, mix_session, MixSpec, HOP_SAMPLES, N_MELS, SAMPLE_RATE, WINDOW_SAMPLES};
use osd_core::corpus::{parallel_map, Corpus, CorpusSpec};
use osd_core::evaluation::{
    accumulate, delta_table, evaluate_corpus, f1_score, prf, score_corpus, ReportRow, SessionScores,
};
use osd_core::labeling::{frame_class_histogram, fuzzify, make_windows, BalancedCurator, FrameClass, FrameLabelTrack};
use osd_core::model::{
    temporal_mask, unit_scores, EncoderInput, ForwardOptions, MaskMode, ModelConfig, ModelInput, OsdModel,
};
use osd_core::numerics::{Graph, ParamStore, Tensor2D};
use osd_core::training::{Checkpoint, MetricsLog, TrainConfig, TrainData, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PUBLISHED_BUDGET: Duration = Duration::from_secs(1);
const GRAD_SEEDS: u64 = 10;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const LABEL_TRACKS: usize = 1000;
const CURATION_EPOCHS: u64 = 100;
const CURATION_TOL: f64 = 0.05;
const MIX_TARGETS: [f64; 2] = [0.19, 0.4227];
const MIX_SECONDS: f64 = 600.0;
const MIX_TOL: f64 = 0.03;
const SILENCE_DBFS: f64 = -50.0;
const E2E_F1: f64 = 0.85;
const E2E_EPOCHS: u64 = 20;
const E2E_PATIENCE: u64 = 5;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);
const ORACLE_PAIRS: usize = 100;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn published_values() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for (name, r, p, f1) in PUBLISHED_ROWS {
        let d = (100.0 * f1_score(p / 100.0, r / 100.0) - f1).abs();
        ensure(d <= PUBLISHED_F1_TOL, || format!("{name}: off by {d:.4}"))?;
        worst = worst.max(d);
    }
    let t = t0.elapsed();
    ensure(t < PUBLISHED_BUDGET, || format!("took {t:?}"))?;
    Ok(format!("{} rows, max |ΔF1| {worst:.4} ≤ {PUBLISHED_F1_TOL}", PUBLISHED_ROWS.len()))
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_SEEDS {
        for (name, rep) in operator_suite(seed).map_err(|e| e.to_string())? {
            ensure(rep.max_rel_error <= GRAD_TOL, || format!("{name} seed {seed}: {:.2e}", rep.max_rel_error))?;
            worst = worst.max(rep.max_rel_error);
        }
        for v in PIPELINE_VARIANTS {
            let rep = pipeline_check(seed, v).map_err(|e| e.to_string())?;
            ensure(rep.max_rel_error <= GRAD_TOL, || format!("{v} seed {seed}: {:.2e}", rep.max_rel_error))?;
            worst = worst.max(rep.max_rel_error);
        }
    }
    let t = t0.elapsed();
    ensure(t < GRAD_BUDGET, || format!("took {t:?}"))?;
    Ok(format!("{GRAD_SEEDS} seeds, max rel error {worst:.2e} ≤ {GRAD_TOL:.0e}, {:.1}s", t.as_secs_f64()))
}

fn masking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = 10;
    let r = Tensor2D::from_fn(t, 16, |_, _| rng.random_range(-1.0..1.0));
    let scores: Vec<f64> = (0..t).map(|i| [0.0, 0.25, 0.5, 1.0, 0.7][i % 5]).collect();
    let mut g = Graph::new();
    let (s, x) = (g.input(Tensor2D::column(&scores)), g.input(r.clone()));
    let m = temporal_mask(&mut g, s, x, MaskMode::Soft).map_err(|e| e.to_string())?;
    let out = g.value(m);
    for (i, &a) in scores.iter().enumerate() {
        if a == 0.0 {
            ensure(out.row(i).iter().all(|&v| v == 0.0), || format!("row {i} not zeroed"))?;
        }
        ensure(out.row(i).iter().zip(r.row(i)).all(|(o, x)| *o == a * x), || format!("row {i} not scaled by {a}"))?;
    }

    let cfg = ModelConfig::miniature();
    for seed in 0..3 {
        let p = OsdModel::new(cfg.clone(), "p-OSD-spkAtt".parse().unwrap(), seed).map_err(|e| e.to_string())?;
        let u = OsdModel::new(cfg.clone(), "u-OSD-spkAtt".parse().unwrap(), seed).map_err(|e| e.to_string())?;
        let frames = 12;
        let wav: Vec<f64> = (0..WINDOW_SAMPLES + (frames - 1) * HOP_SAMPLES).map(|_| rng.random_range(-0.5..0.5)).collect();
        let fb = Tensor2D::from_fn(frames, N_MELS, |_, _| rng.random_range(-5.0..2.0));
        let input = || ModelInput {
            encoder: EncoderInput::Samples(&wav),
            fbank: &fb,
        };
        let mut g = Graph::new();
        let opts = ForwardOptions {
            mask: MaskMode::Soft,
            vad_override: Some(unit_scores(frames)),
        };
        let po = p.forward(&mut g, input(), &opts).map_err(|e| e.to_string())?;
        let uo = u.forward(&mut g, input(), &ForwardOptions::default()).map_err(|e| e.to_string())?;
        let same = g.value(po.osd).data().iter().zip(g.value(uo.osd).data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, || format!("all-ones mask: p != u at seed {seed}"))?;
    }
    Ok("zero rows, exact α-scaling, all-ones p ≡ u bitwise".into())
}

fn fuzzy_labels() -> Outcome {
    let mut crisp = vec![0.0; 60];
    crisp[10..50].iter_mut().for_each(|v| *v = 1.0);
    let f = fuzzify(&crisp).map_err(|e| e.to_string())?;
    for k in 0..10 {
        let want = (k + 1) as f64 / 10.0;
        ensure(f[10 + k] == want && f[49 - k] == want, || format!("ramp value at k={k}"))?;
    }
    ensure(f[20..40].iter().all(|&v| v == 1.0), || "plateau".into())?;
    ensure(f[..10].iter().chain(&f[50..]).all(|&v| v == 0.0), || "outside run".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 0..LABEL_TRACKS {
        let track = random_sticky_track(&mut rng);
        let crisp: Vec<f64> = track.iter().map(|&b| f64::from(u8::from(b))).collect();
        let got = fuzzify(&crisp).map_err(|e| e.to_string())?;
        ensure(got == brute_force_fuzzy(&track), || format!("track {n} differs from brute force"))?;
        ensure(got.iter().zip(&track).all(|(v, b)| (*v > 0.0) == *b), || format!("track {n} support"))?;
        let counts: Vec<u32> = track.iter().map(|&b| if b { rng.random_range(1..4) } else { 0 }).collect();
        let l = FrameLabelTrack::from_counts(&counts);
        ensure(l.osd.iter().zip(&l.vad).all(|(o, v)| o <= v), || format!("track {n}: OSD above VAD"))?;
    }
    Ok(format!("golden run of 40, {LABEL_TRACKS} tracks match brute force, support kept, OSD ⊆ VAD"))
}

/// Exact per-class counts on a single-heavy fixture, then the frame
/// histogram of windows cut from a mixer corpus at training segmentation.
fn curation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let fixture: Vec<Vec<u32>> = (0..6)
        .map(|_| {
            let mut c = Vec::new();
            while c.len() < 15_000 {
                let class = [0, 1, 1, 1, 2][rng.random_range(0..5)];
                c.extend(std::iter::repeat_n(class, rng.random_range(50..600)));
            }
            c.truncate(15_000);
            c
        })
        .collect();
    let windows: Vec<_> = fixture
        .iter()
        .enumerate()
        .flat_map(|(i, c)| make_windows("s", i, c, 250, 250))
        .collect();
    let curator = BalancedCurator::new(&windows).map_err(|e| e.to_string())?;
    let q = curator.quota();
    for epoch in 0..CURATION_EPOCHS {
        let picked = curator.epoch(3, epoch);
        for class in FrameClass::ALL {
            let n = picked.iter().filter(|&&i| windows[i].class_tag == class).count();
            ensure(n == q, || format!("epoch {epoch}: {n} {} windows, expected {q}", class.name()))?;
        }
    }

    let (train, _) = e2e_corpus();
    let cfg = e2e_config("p-OSD-spkAtt");
    let counts: Vec<&[u32]> = train.sessions.iter().map(|s| s.counts.as_slice()).collect();
    let windows: Vec<_> = counts
        .iter()
        .enumerate()
        .flat_map(|(i, c)| make_windows("s", i, c, cfg.window_frames(), cfg.hop_frames()))
        .collect();
    let curator = BalancedCurator::new(&windows).map_err(|e| e.to_string())?;
    let mut hist = [0usize; 3];
    for epoch in 0..CURATION_EPOCHS {
        let picked = curator.epoch(cfg.seed, epoch);
        for class in FrameClass::ALL {
            let n = picked.iter().filter(|&&i| windows[i].class_tag == class).count();
            ensure(n == curator.quota(), || format!("corpus epoch {epoch}: {n} {} windows", class.name()))?;
        }
        for i in picked {
            let w = &windows[i];
            let h = frame_class_histogram(&counts[w.session][w.start_frame..w.start_frame + w.num_frames]);
            (0..3).for_each(|k| hist[k] += h[k]);
        }
    }
    let total: usize = hist.iter().sum();
    let fracs: Vec<f64> = hist.iter().map(|&n| n as f64 / total as f64).collect();
    for f in &fracs {
        ensure((f - 1.0 / 3.0).abs() <= CURATION_TOL, || format!("frame fractions {fracs:.3?}"))?;
    }
    Ok(format!(
        "{CURATION_EPOCHS} epochs exactly balanced ({q} and {} per class), frame fractions {fracs:.3?} (±{CURATION_TOL})",
        curator.quota()
    ))
}

fn mixer() -> Outcome {
    let specs: Vec<MixSpec> = MIX_TARGETS
        .iter()
        .enumerate()
        .map(|(i, &t)| MixSpec {
            num_speakers: 3,
            target_overlap_ratio: t,
            session_seconds: MIX_SECONDS,
            gap_mean_seconds: 1.5,
            seed: 100 + i as u64,
            ..MixSpec::default()
        })
        .collect();
    let mixed = parallel_map(specs.len(), 2, |i| mix_session(&specs[i])).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    for (spec, (wav, ann)) in specs.iter().zip(&mixed) {
        let (speech, overlap) = ann.speech_and_overlap_seconds();
        let r = overlap / speech;
        let target = spec.target_overlap_ratio;
        ensure((r - target).abs() <= MIX_TOL, || format!("target {target}: realized {r:.4}"))?;
        let block = (0.2 * SAMPLE_RATE as f64) as usize;
        let mut loudest = f64::NEG_INFINITY;
        for b in 0..wav.samples.len() / block {
            let (t0, t1) = (b as f64 * 0.2, (b + 1) as f64 * 0.2);
            if ann.entries.iter().all(|s| s.end() <= t0 || s.onset >= t1) {
                loudest = loudest.max(dbfs(&wav.samples[b * block..(b + 1) * block]));
            }
        }
        ensure(loudest < SILENCE_DBFS, || format!("silent block at {loudest:.1} dBFS"))?;
        details.push(format!("{target} → {r:.4}"));
    }
    Ok(format!("{} (±{MIX_TOL}), annotated silence < {SILENCE_DBFS} dBFS", details.join(", ")))
}

fn e2e_corpus() -> (Corpus, Corpus) {
    let spec = CorpusSpec {
        sessions: 12,
        mix: MixSpec {
            num_speakers: 3,
            target_overlap_ratio: 0.5,
            session_seconds: 150.0,
            gap_mean_seconds: 3.0,
            seed: 7,
            ..MixSpec::default()
        },
    };
    let corpus = Corpus::synthesize("desk", &spec, 4).expect("synthesis");
    corpus.split_tail(2, "desk-dev").expect("split")
}

fn e2e_config(variant: &str) -> TrainConfig {
    TrainConfig {
        variant: variant.parse().unwrap(),
        base_lr: 1e-3,
        pretrain_epochs: 0,
        finetune_epochs: E2E_EPOCHS,
        patience: E2E_PATIENCE,
        seed: 7,
        ..TrainConfig::default()
    }
}

/// Trains one variant and returns (best dev row, best dev F1, epochs run, time).
fn e2e_run(variant: &str, train: &Corpus, dev: &Corpus) -> Result<(ReportRow, f64, usize, Duration), String> {
    let t0 = Instant::now();
    let data = TrainData {
        pretrain: None,
        train,
        dev,
    };
    let mut t = Trainer::new(ModelConfig::default(), e2e_config(variant), data, 1).map_err(|e| e.to_string())?;
    let log = t
        .run(|_, r| {
            println!("    {variant} epoch {:>2}  loss {:.4}  dev F1 {:.4}", r.epoch, r.loss, r.dev_f1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = t0.elapsed();
    let best = t.best_model().map_err(|e| e.to_string())?;
    let c = evaluate_corpus(&best, dev, 0.5, MaskMode::Soft, 1).map_err(|e| e.to_string())?;
    let p = prf(&c.osd);
    let name = best.name();
    Ok((ReportRow::from_prf(name, &p), t.state.best_dev_f1.unwrap_or(0.0), log.len(), elapsed))
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let (train, dev) = e2e_corpus();
    let synth = t0.elapsed();
    let minutes = (train.total_seconds() + dev.total_seconds()) / 60.0;
    println!(
        "    corpus {minutes:.0} min ({} train / {} dev sessions), overlap {:.3}, synthesized in {:.1}s",
        train.sessions.len(),
        dev.sessions.len(),
        train.overlap_ratio(),
        synth.as_secs_f64()
    );
    let (p_row, p_f1, p_epochs, p_time) = e2e_run("p-OSD-spkAtt", &train, &dev)?;
    let (u_row, u_f1, u_epochs, u_time) = e2e_run("u-OSD-spkAtt", &train, &dev)?;
    println!("    u-OSD-spkAtt best dev F1 {u_f1:.4} after {u_epochs} epochs in {:.0}s", u_time.as_secs_f64());
    println!("{}", delta_table(&p_row, &u_row).lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n"));
    let summary = format!(
        "p-OSD-spkAtt best dev F1 {p_f1:.4} (≥ {E2E_F1}) in {p_epochs} epochs, {:.0}s (≤ {}s)",
        p_time.as_secs_f64(),
        E2E_BUDGET.as_secs()
    );
    ensure(p_f1 >= E2E_F1 && p_time <= E2E_BUDGET, || summary.clone())?;
    Ok(summary)
}

fn bitwise(a: &ParamStore, b: &ParamStore) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|((_, x), (_, y))| x.value.data().iter().zip(y.value.data()).all(|(p, q)| p.to_bits() == q.to_bits()))
}

fn determinism() -> Outcome {
    let (train, dev) = (tiny_corpus("train", 1, 3), tiny_corpus("dev", 2, 1));
    let data = TrainData {
        pretrain: None,
        train: &train,
        dev: &dev,
    };
    let cfg = tiny_train("p-OSD-spkAtt", 3);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("{run}.jsonl"));
        let mut log = MetricsLog::append(&path).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(ModelConfig::miniature(), cfg.clone(), data, 1).map_err(|e| e.to_string())?;
        t.run(|_, r| log.write(r)).map_err(|e| e.to_string())?;
        logs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure(logs[0] == logs[1], || "metrics logs differ".into())?;

    let mut straight = Trainer::new(ModelConfig::miniature(), cfg.clone(), data, 1).map_err(|e| e.to_string())?;
    let mut cut = Trainer::new(ModelConfig::miniature(), cfg, data, 1).map_err(|e| e.to_string())?;
    for _ in 0..straight.batches_per_epoch() + 1 {
        straight.train_batch().map_err(|e| e.to_string())?;
        cut.train_batch().map_err(|e| e.to_string())?;
    }
    let path = dir.path().join("cut.osdc");
    cut.checkpoint().save(&path).map_err(|e| e.to_string())?;
    let best = cut.best.take();
    drop(cut);
    let ckpt = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let mut resumed = Trainer::resume(&ckpt, data, best, 1).map_err(|e| e.to_string())?;
    straight.train_batch().map_err(|e| e.to_string())?;
    resumed.train_batch().map_err(|e| e.to_string())?;
    ensure(bitwise(&straight.model.params, &resumed.model.params), || "resumed step differs".into())?;
    let a = straight.run(|_, _| Ok(())).map_err(|e| e.to_string())?;
    let b = resumed.run(|_, _| Ok(())).map_err(|e| e.to_string())?;
    ensure(a == b, || "resumed metrics differ".into())?;
    Ok(format!("identical {}-byte metrics logs; save/load/step bitwise equal", logs[0].len()))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for pair in 0..ORACLE_PAIRS {
        let t = rng.random_range(1..600);
        let counts: Vec<u32> = (0..t).map(|_| rng.random_range(0..3)).collect();
        let labels = FrameLabelTrack::from_counts(&counts);
        let scores = SessionScores {
            vad: (0..t).map(|_| rng.random_range(0.0..1.0)).collect(),
            osd: (0..t).map(|_| rng.random_range(0.0..1.0)).collect(),
        };
        let c = accumulate(std::slice::from_ref(&scores), &[&labels], 0.5).map_err(|e| e.to_string())?;
        let got = [c.osd.true_positive, c.osd.false_positive, c.osd.false_negative, c.osd.true_negative];
        ensure(got == count_oracle(&scores.osd, &labels.osd, 0.5), || format!("pair {pair}"))?;
    }
    // the full path: model scores through evaluate_corpus
    let corpus = tiny_corpus("oracle", 3, 2);
    let model = OsdModel::new(ModelConfig::miniature(), "p-OSD-spkAtt".parse().unwrap(), 4).map_err(|e| e.to_string())?;
    let scores = score_corpus(&model, &corpus, MaskMode::Soft, 1).map_err(|e| e.to_string())?;
    let c = evaluate_corpus(&model, &corpus, 0.5, MaskMode::Soft, 1).map_err(|e| e.to_string())?;
    let mut want = [0u64; 4];
    for (s, sess) in scores.iter().zip(&corpus.sessions) {
        let o = count_oracle(&s.osd, &sess.labels.osd, 0.5);
        (0..4).for_each(|k| want[k] += o[k]);
    }
    let got = [c.osd.true_positive, c.osd.false_positive, c.osd.false_negative, c.osd.true_negative];
    ensure(got == want, || "evaluate_corpus differs from oracle".into())?;
    Ok(format!("{ORACLE_PAIRS} random pairs and a scored corpus match exactly"))
}

// Runs without the libtest harness so the lines are never captured.
fn main() -> ExitCode {
    // a name filter passed to `cargo test` that does not match skips the suite
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("published-value consistency", published_values),
        ("gradient suite", gradients),
        ("masking invariants", masking),
        ("fuzzy-label suite", fuzzy_labels),
        ("balanced curation", curation),
        ("mixer statistics", mixer),
        ("end-to-end desk-scale experiment", end_to_end),
        ("determinism and checkpoint round-trip", determinism),
        ("metric oracle", metric_oracle),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t0 = Instant::now();
        let outcome = check();
        let secs = t0.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                println!("FAIL  {name}: {why} [{secs:.1}s]");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
