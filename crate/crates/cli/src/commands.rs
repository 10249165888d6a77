use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use osd_core::audio::io::{read_wav, write_rttm};
use osd_core::audio::{frame_center_seconds, Segment, SegmentAnnotation, FRAME_SHIFT_SECONDS};
use osd_core::corpus::{Corpus, Session};
use osd_core::evaluation::{
    ablation_matrix, accumulate, best_threshold, prf, score_corpus, score_session, sweep, sweep_thresholds,
    AblationData, AblationEntry, EvalReport, ReportRow,
};
use osd_core::labeling::{write_label_cache, FrameLabelTrack};
use osd_core::model::{read_osdf, MaskMode};
use osd_core::seed::derive_seed;
use osd_core::training::{Checkpoint, MetricsLog, MetricsRecord, TrainConfig, TrainData, Trainer};
use osd_core::{Error, Result};
use serde::Serialize;

use crate::config::RunConfigFile;
use crate::{AblateArgs, Cli, Command, EvalArgs, InferArgs, SynthArgs, TrainArgs};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::SynthData(a) => synth(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Infer(a) => infer(a),
        Command::Ablate(a) => ablate(cli, a),
    }
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// A corpus argument may name the directory or its manifest.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.jsonl")
    } else {
        p.to_path_buf()
    }
}

fn load_corpus(p: &Path, features: Option<&Path>) -> Result<Corpus> {
    Corpus::load(&manifest_path(p), features)
}

fn synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load(a.config.as_deref())?;
    let d = &mut cfg.data;
    if let Some(v) = a.sessions {
        d.sessions = v;
    }
    if let Some(v) = a.session_seconds {
        d.mix.session_seconds = v;
    }
    if let Some(v) = a.overlap_ratio {
        d.mix.target_overlap_ratio = v;
    }
    if let Some(v) = a.speakers {
        d.mix.num_speakers = v;
    }
    if let Some(v) = cli.seed {
        d.mix.seed = v;
    }
    cfg.validate()?;
    let id = a.out.file_name().map_or_else(|| "corpus".into(), |n| n.to_string_lossy().into_owned());
    let corpus = Corpus::synthesize(id, &cfg.data.corpus_spec(), jobs(cli))?;
    let manifest = corpus.save(&a.out)?;
    for s in &corpus.sessions {
        write_label_cache(&a.out.join(format!("{}.osdl", s.id)), &s.labels)?;
    }
    cfg.snapshot(&a.out)?;
    println!(
        "{} sessions, {:.3} h, overlap ratio {:.4} (target {:.4}), manifest {}",
        corpus.sessions.len(),
        corpus.total_seconds() / 3600.0,
        corpus.overlap_ratio(),
        cfg.data.mix.target_overlap_ratio,
        manifest.display()
    );
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let features = a.features.as_deref();
    let train_set = load_corpus(&a.data, features)?;
    let dev = load_corpus(&a.dev, features)?;
    let pretrain = a.pretrain.as_deref().map(|p| load_corpus(p, features)).transpose()?;
    let data = TrainData {
        pretrain: pretrain.as_ref(),
        train: &train_set,
        dev: &dev,
    };
    let mut cfg = RunConfigFile::load(a.config.as_deref())?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let best_path = path.with_file_name("best.osdc");
            let best = if best_path.exists() {
                Some(Checkpoint::load(&best_path)?.params)
            } else {
                None
            };
            // keep only the epochs the checkpoint has seen, byte for byte
            let kept: Vec<String> = if metrics_path.exists() {
                let text = fs::read_to_string(&metrics_path)?;
                let mut kept = Vec::new();
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let rec: MetricsRecord = serde_json::from_str(line)?;
                    if rec.epoch < ckpt.state.global_epoch {
                        kept.push(line.to_string());
                    }
                }
                kept
            } else {
                Vec::new()
            };
            rewrite_metrics(&metrics_path, &kept)?;
            log::info!("resuming {} at epoch {}", ckpt.config_hash(), ckpt.state.global_epoch);
            Trainer::resume(&ckpt, data, best, jobs(cli))?
        }
        None => {
            let t = &mut cfg.train;
            if let Some(v) = a.variant {
                t.variant = v;
            }
            if let Some(v) = a.epochs {
                t.finetune_epochs = v;
            }
            if let Some(v) = a.lr {
                t.base_lr = v;
                t.lr_floor = t.lr_floor.min(v);
            }
            if let Some(v) = cli.seed {
                t.seed = v;
            }
            cfg.validate()?;
            if cfg.train.pretrain_epochs > 0 && pretrain.is_none() {
                return Err(Error::Config("train.pretrain_epochs > 0 needs --pretrain".into()));
            }
            rewrite_metrics(&metrics_path, &[])?;
            Trainer::new(cfg.model.clone(), cfg.train.clone(), data, jobs(cli))?
        }
    };
    cfg.model = trainer.identity.model.clone();
    cfg.train = trainer.identity.train.clone();
    cfg.snapshot(&a.out)?;

    let mut log = MetricsLog::append(&metrics_path)?;
    let mut epochs = 0;
    while !trainer.is_finished() {
        let Some(rec) = trainer.train_batch()? else {
            continue;
        };
        log.write(&rec)?;
        if trainer.state.best_epoch == Some(rec.epoch) {
            let mut best = trainer.checkpoint();
            best.params = trainer.best.clone().expect("best params exist with a best epoch");
            best.save(&a.out.join("best.osdc"))?;
        }
        trainer.checkpoint().save(&a.out.join("last.osdc"))?;
        epochs += 1;
        if a.stop_after.is_some_and(|n| epochs >= n) && !trainer.is_finished() {
            println!("stopped after {epochs} epochs; continue with --resume {}", a.out.join("last.osdc").display());
            return Ok(());
        }
    }
    println!(
        "{} finished: best dev OSD F1 {:.4} at epoch {}, config {}",
        trainer.model.name(),
        trainer.state.best_dev_f1.unwrap_or(0.0),
        trainer.state.best_epoch.unwrap_or(0),
        trainer.identity.hash()
    );
    Ok(())
}

fn rewrite_metrics(path: &Path, lines: &[String]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn evaluate(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let cfg = RunConfigFile::load(a.config.as_deref())?;
    let threshold = a.threshold.unwrap_or(cfg.eval.threshold);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0,1), got {threshold}")));
    }
    let sweep_mode = a.sweep || cfg.eval.sweep;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let corpus = load_corpus(&a.manifest, a.features.as_deref())?;
    let mask = if a.hard_mask {
        MaskMode::Hard {
            threshold: model.config.mask_threshold,
        }
    } else {
        MaskMode::Soft
    };
    let scores = score_corpus(&model, &corpus, mask, jobs(cli))?;
    let labels: Vec<&FrameLabelTrack> = corpus.sessions.iter().map(|s| &s.labels).collect();
    let c = accumulate(&scores, &labels, threshold)?;
    let name = model.name();
    let mut rows = vec![ReportRow::from_prf(name.clone(), &prf(&c.osd))];
    let mut best = None;
    if sweep_mode {
        let sw = sweep(&scores, &labels, &sweep_thresholds())?;
        rows = sw
            .iter()
            .map(|r| ReportRow::from_prf(format!("{name} @{:.1}", r.threshold), &r.osd))
            .collect();
        best = best_threshold(&sw);
    }
    let report = EvalReport {
        corpus_id: corpus.id.clone(),
        checkpoint_hash: ckpt.config_hash(),
        threshold,
        rows,
        vad_rows: vec![ReportRow::from_prf(name, &prf(&c.vad))],
    };
    fs::create_dir_all(&a.out)?;
    let mut text = report.to_text();
    if let Some(b) = best {
        text.push_str(&format!("\nbest threshold {b:.1}\n"));
    }
    fs::write(a.out.join("report.json"), report.to_json())?;
    fs::write(a.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct FrameScore {
    frame: usize,
    t_seconds: f64,
    vad: f64,
    osd: f64,
}

/// Runs of `osd ≥ threshold` as segments spanning the frames' 20 ms cells
/// around their centers.
pub fn overlap_segments(osd: &[f64], threshold: f64) -> SegmentAnnotation {
    let half = FRAME_SHIFT_SECONDS / 2.0;
    let mut entries = Vec::new();
    let mut i = 0;
    while i < osd.len() {
        if osd[i] < threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < osd.len() && osd[i] >= threshold {
            i += 1;
        }
        entries.push(Segment {
            speaker: "overlap".into(),
            onset: frame_center_seconds(start) - half,
            duration: (i - start) as f64 * FRAME_SHIFT_SECONDS,
        });
    }
    SegmentAnnotation::new(entries)
}

fn infer(a: &InferArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config(format!("threshold must be in (0,1), got {}", a.threshold)));
    }
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let wav = read_wav(&a.wav)?;
    let id = wav.id.clone();
    let mut session = Session::new(wav, SegmentAnnotation::default())?;
    if let Some(f) = &a.features {
        session = session.with_features(read_osdf(f)?.features)?;
    }
    let scores = score_session(&model, &session, MaskMode::Soft)?;
    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(fs::File::create(a.out.join("scores.jsonl"))?);
    for (i, (v, o)) in scores.vad.iter().zip(&scores.osd).enumerate() {
        let rec = FrameScore {
            frame: i,
            t_seconds: frame_center_seconds(i),
            vad: *v,
            osd: *o,
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    w.flush()?;
    let segments = overlap_segments(&scores.osd, a.threshold);
    write_rttm(&a.out.join("overlap.rttm"), &id, &segments)?;
    println!("{} frames, {} overlap segments", scores.osd.len(), segments.entries.len());
    Ok(())
}

fn ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let mut cfg = RunConfigFile::load(a.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.train.finetune_epochs = v;
    }
    if let Some(v) = cli.seed {
        cfg.train.seed = v;
    }
    cfg.validate()?;
    let seeds = a
        .seeds
        .clone()
        .unwrap_or_else(|| (0..3).map(|i| derive_seed(cfg.train.seed, "ablation", i)).collect());
    let features = a.features.as_deref();
    let train_set = load_corpus(&a.data, features)?;
    let dev = load_corpus(&a.dev, features)?;
    let test = a.test.as_deref().map(|p| load_corpus(p, features)).transpose()?;
    let pretrain = a.pretrain.as_deref().map(|p| load_corpus(p, features)).transpose()?;
    let entries: Vec<AblationEntry> = a
        .variants
        .iter()
        .map(|&v| AblationEntry {
            name: None,
            model: cfg.model.clone(),
            train: TrainConfig {
                variant: v,
                ..cfg.train.clone()
            },
        })
        .collect();
    let data = AblationData {
        pretrain: pretrain.as_ref(),
        train: &train_set,
        dev: &dev,
        test: test.as_ref().unwrap_or(&dev),
    };
    let report = ablation_matrix(&entries, &seeds, data, cfg.eval.threshold, jobs(cli))?;
    fs::create_dir_all(&a.out)?;
    cfg.snapshot(&a.out)?;
    let table = EvalReport {
        corpus_id: report.corpus_id.clone(),
        checkpoint_hash: cfg.hash(),
        threshold: report.threshold,
        rows: report.report_rows(),
        vad_rows: Vec::new(),
    };
    let text = format!("seeds {:?}\n{}", report.seeds, table.to_text());
    fs::write(a.out.join("ablation.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(a.out.join("ablation.txt"), &text)?;
    print!("{text}");
    Ok(())
}
