mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use osd_core::model::Variant;
use osd_core::Error;

/// Speaker-aware progressive overlapping speech detection.
#[derive(Parser, Debug)]
#[command(name = "osd", version, about)]
pub struct Cli {
    /// Base seed; every random stream is derived from it by name.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for synthesis and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a corpus: WAVs, RTTMs, label caches and a manifest.
    SynthData(SynthArgs),
    /// Train a model; writes checkpoints and a per-epoch metrics log.
    Train(TrainArgs),
    /// Score a corpus with a checkpoint and write report.json / report.txt.
    Evaluate(EvalArgs),
    /// Per-frame scores and overlap segments for one WAV file.
    Infer(InferArgs),
    /// Train and score several variants over a shared seed set.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Run configuration JSON (the `data` section is used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sessions.
    #[arg(long)]
    pub sessions: Option<usize>,
    /// Session length in seconds.
    #[arg(long)]
    pub session_seconds: Option<f64>,
    /// Target fraction of speech with two or more speakers.
    #[arg(long)]
    pub overlap_ratio: Option<f64>,
    /// Speakers per session.
    #[arg(long)]
    pub speakers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration JSON (`model` and `train` sections are used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training corpus: a directory holding manifest.jsonl, or the manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Dev corpus scored after every epoch.
    #[arg(long)]
    pub dev: PathBuf,
    /// Pretraining corpus, used when train.pretrain_epochs > 0.
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    /// Directory of `<session>.osdf` encoder features for all corpora.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Model variant, e.g. p-spkAtt or u-OSD-spkMSE.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Fine-tuning epoch cap.
    #[arg(long)]
    pub epochs: Option<u64>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue the run stored in this checkpoint (its configuration wins).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop this invocation after N epochs; the run can be resumed later.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to score.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory or manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    pub out: PathBuf,
    /// Decision threshold for both tasks.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Report every threshold in 0.1..0.9 and the best one.
    #[arg(long)]
    pub sweep: bool,
    /// Zero frames below the mask threshold instead of soft scaling.
    #[arg(long)]
    pub hard_mask: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// 16 kHz mono WAV.
    #[arg(long)]
    pub wav: PathBuf,
    /// OSDF features for the file, required by ingested-encoder models.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory for scores.jsonl and overlap.rttm.
    #[arg(long)]
    pub out: PathBuf,
    /// Overlap decision threshold.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Corpus the rows are scored on (default: the dev corpus).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub pretrain: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated variants; each uses the file's model and train sections.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, default_value = "p-OSD-spkAtt,u-OSD-spkAtt")]
    pub variants: Vec<Variant>,
    /// Comma-separated training seeds (default: three derived from --seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<u64>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OSD_LOG", "info")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
