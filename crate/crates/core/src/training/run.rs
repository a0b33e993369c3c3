//! The epoch loop: batches, schedule, logging, checkpoints and resume.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{lr_at_epoch, ExperimentConfig};
use crate::data::{
    epoch_rng, load_manifest, paired_batch_iterator, steps_per_epoch, Domain, DomainCorpus, Split,
};
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::tensor::{fnv_feed, fnv_start};

use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::state::TrainState;
use super::step::train_step;

pub const STEP_LOG: &str = "train_log.jsonl";
pub const EPOCH_LOG: &str = "epochs.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Callback invoked after each completed epoch.
pub type EpochHook = Box<dyn Fn(&EpochSummary)>;

/// One line of the per-step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

/// Per-epoch means plus a hash of every batch consumed in the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub mean: LossBreakdown,
    pub batch_hash: u64,
}

#[derive(Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete (after checkpointing), as if
    /// the run had been interrupted.
    pub stop_after_epoch: Option<usize>,
    pub on_epoch: Option<EpochHook>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub summaries: Vec<EpochSummary>,
    pub checkpoint: PathBuf,
    pub step_log: PathBuf,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Loads the configured manifests and decodes both training splits.
pub fn load_training_corpora(cfg: &ExperimentConfig) -> Result<(DomainCorpus, DomainCorpus)> {
    let src = load_manifest(&cfg.source_manifest)?;
    let tgt = if cfg.target_manifest == cfg.source_manifest {
        src.clone()
    } else {
        load_manifest(&cfg.target_manifest)?
    };
    Ok((
        DomainCorpus::load(&src, Domain::Source, Split::Train, cfg.crop_size)?,
        DomainCorpus::load(&tgt, Domain::Target, Split::Train, cfg.crop_size)?,
    ))
}

/// Trains from the configured manifests, writing logs and checkpoints to `out_dir`.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path, opts: TrainOptions) -> Result<TrainOutcome> {
    let (source, target) = load_training_corpora(cfg)?;
    train_on(cfg, &source, &target, out_dir, opts)
}

/// Drops log lines written after `last_step`, so a resumed run does not
/// duplicate records from an interrupted one.
fn truncate_log(path: &Path, keep: impl Fn(&serde_json::Value) -> bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if keep(&v) {
            kept.push(line);
        }
    }
    let mut out = String::new();
    for l in kept {
        out.push_str(&l);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn mean_breakdown(sum: &[f64; 7], n: usize) -> LossBreakdown {
    let m = |i: usize| sum[i] / n.max(1) as f64;
    LossBreakdown {
        seg_ce: m(0),
        seg_dice: m(1),
        adv_img_g: m(2),
        adv_feat_g: m(3),
        d_img: m(4),
        d_feat: m(5),
        total_g: m(6),
    }
}

/// Trains on in-memory corpora.
pub fn train_on(
    cfg: &ExperimentConfig,
    source: &DomainCorpus,
    target: &DomainCorpus,
    out_dir: &Path,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let step_log = out_dir.join(STEP_LOG);
    let epoch_log = out_dir.join(EPOCH_LOG);

    let mut state = match &opts.resume {
        Some(path) => {
            let state = load_checkpoint(path)?.into_state(cfg)?;
            let (step, epoch) = (state.global_step, state.epoch);
            truncate_log(&step_log, |v| v["step"].as_u64().is_some_and(|s| s <= step))?;
            truncate_log(&epoch_log, |v| v["epoch"].as_u64().is_some_and(|e| (e as usize) < epoch))?;
            state
        }
        None => TrainState::new(cfg),
    };
    let expected_steps = steps_per_epoch(source.len(), cfg.crops_per_image, cfg.batch_size);
    if state.global_step != (state.epoch * expected_steps) as u64 {
        return Err(Error::Precondition(format!(
            "checkpoint step {} is inconsistent with epoch {} at {expected_steps} steps per epoch",
            state.global_step, state.epoch
        )));
    }
    let append = opts.resume.is_some();
    let mut steps_out = open_log(&step_log, append)?;
    let mut epochs_out = open_log(&epoch_log, append)?;

    let mut summaries = Vec::new();
    let mut last_checkpoint = None;
    let stop = opts
        .stop_after_epoch
        .unwrap_or(cfg.total_epochs)
        .min(cfg.total_epochs);

    while state.epoch < stop {
        let epoch = state.epoch;
        let lr = lr_at_epoch(cfg, epoch)?;
        let batches = paired_batch_iterator(source, target, cfg, epoch_rng(cfg.seed, epoch))?;
        let mut sums = [0f64; 7];
        let mut hash = fnv_start();
        let mut steps = 0;
        for pair in batches {
            let (src, tgt) = pair?;
            hash = fnv_feed(hash, &src.hash().to_le_bytes());
            hash = fnv_feed(hash, &tgt.hash().to_le_bytes());
            let losses = train_step(&mut state, &src, &tgt, cfg)?;
            for (s, (_, v)) in sums.iter_mut().zip(losses.fields()) {
                *s += v;
            }
            let record = StepRecord {
                step: state.global_step,
                epoch,
                lr,
                losses,
            };
            serde_json::to_writer(&mut steps_out, &record)?;
            writeln!(steps_out).map_err(|e| Error::io(&step_log, e))?;
            steps += 1;
        }
        state.epoch += 1;
        steps_out.flush().map_err(|e| Error::io(&step_log, e))?;

        let summary = EpochSummary {
            epoch,
            lr,
            steps,
            mean: mean_breakdown(&sums, steps),
            batch_hash: hash,
        };
        serde_json::to_writer(&mut epochs_out, &summary)?;
        writeln!(epochs_out).map_err(|e| Error::io(&epoch_log, e))?;
        epochs_out.flush().map_err(|e| Error::io(&epoch_log, e))?;
        if let Some(cb) = &opts.on_epoch {
            cb(&summary);
        }

        let done = state.epoch == stop;
        if state.epoch % cfg.checkpoint_every == 0 || done {
            let path = checkpoint_path(out_dir, state.epoch);
            save_checkpoint(&state, cfg, &serde_json::to_value(&summary)?, &path)?;
            last_checkpoint = Some(path);
        }
        summaries.push(summary);
    }

    let checkpoint = match last_checkpoint {
        Some(p) => p,
        None => {
            // Nothing left to train; still leave a checkpoint of the final state.
            let path = checkpoint_path(out_dir, state.epoch);
            save_checkpoint(&state, cfg, &serde_json::Value::Null, &path)?;
            path
        }
    };
    Ok(TrainOutcome {
        state,
        summaries,
        checkpoint,
        step_log,
    })
}

/// Reads a per-step log back.
pub fn read_step_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Reads the per-epoch summaries back.
pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochSummary>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
