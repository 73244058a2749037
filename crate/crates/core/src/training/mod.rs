//! Adam training under a cyclical cosine schedule, with a windowed
//! convergence test, periodic checkpoints and exact resumption.
//!
//! Everything random is keyed by the configured seed: initial weights, the
//! per-epoch batch shuffle and the dropout masks. A run resumed from a
//! checkpoint therefore retraces the uninterrupted run bit for bit.

mod adam;
mod checkpoint;
mod schedule;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use schedule::{lr_at, LrSchedule};

use crate::dataset::{batches, Dataset, DatasetError};
use crate::format::FormatError;
use crate::neuralops::{Architecture, Batch, Model, ModelConfig, ModelError};
use crate::rng::{stream, Domain};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("non-finite {what}; last good checkpoint: {}", last_checkpoint.as_ref().map_or("none".into(), |p| p.display().to_string()))]
    NonFinite {
        what: String,
        last_checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Training run description, usually read from a JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    /// Dataset file (used by the command-line driver).
    pub dataset: Option<PathBuf>,
    /// Train on a nested subset of this many training designs.
    pub train_subset: Option<usize>,
    pub seed: u64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// No convergence stop before this many epochs.
    pub min_epochs: usize,
    /// Smoothing window of the stopping rule; `None` picks 200 epochs for
    /// DeepONets and 100 for FNOs.
    pub stop_window: Option<usize>,
    /// Stop once the windowed mean training error improves by less than this
    /// fraction from one window to the next.
    pub stop_threshold: f64,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    /// Checkpoint every this many epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
    pub output_dir: Option<PathBuf>,
    /// Designs per gradient work unit. Gradients are computed per chunk and
    /// summed in chunk order, so results do not depend on the thread count.
    pub grad_chunk: usize,
    /// Emit a progress log line every this many epochs (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            dataset: None,
            train_subset: None,
            seed: 0,
            batch_size: 256,
            max_epochs: 20_000,
            min_epochs: 0,
            stop_window: None,
            stop_threshold: 1e-3,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 1_000,
            output_dir: None,
            grad_chunk: 64,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_architecture(architecture: Architecture) -> Self {
        TrainConfig {
            model: ModelConfig::new(architecture),
            ..Default::default()
        }
    }

    pub fn window(&self) -> usize {
        self.stop_window
            .unwrap_or(if self.model.architecture.is_fno() { 100 } else { 200 })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 || self.grad_chunk == 0 {
            return Err(TrainError::Config(
                "batch_size and grad_chunk must be at least 1".into(),
            ));
        }
        if !(self.stop_threshold > 0.0) {
            return Err(TrainError::Config(format!(
                "stop_threshold {} must be positive",
                self.stop_threshold
            )));
        }
        if self.window() == 0 {
            return Err(TrainError::Config("stop_window must be at least 1".into()));
        }
        if self.max_epochs > self.schedule.horizon {
            return Err(TrainError::Config(format!(
                "max_epochs {} exceeds the schedule horizon {}",
                self.max_epochs, self.schedule.horizon
            )));
        }
        Ok(())
    }
}

/// One completed epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean per-design training loss.
    pub loss: f64,
    /// Mean per-design training relative ℓ₂ error.
    pub rel_l2: f64,
    pub lr: f64,
    /// Wall-clock seconds since the run started (excluding resumed time).
    pub seconds: f64,
}

impl EpochRow {
    /// Row content without the wall-clock column.
    pub fn trajectory(&self) -> (usize, f64, f64, f64) {
        (self.epoch, self.loss, self.rel_l2, self.lr)
    }
}

pub const RECORD_HEADER: &str = "epoch,loss,rel_l2,lr,seconds";

/// Writes rows as CSV, one line per epoch.
pub fn write_record_csv<W: Write>(rows: &[EpochRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:.6}",
            r.epoch, r.loss, r.rel_l2, r.lr, r.seconds
        )?;
    }
    Ok(())
}

/// Windowed convergence test on the per-epoch training error.
#[derive(Clone, Debug)]
pub struct ConvergenceMonitor {
    window: usize,
    threshold: f64,
    history: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(window: usize, threshold: f64) -> Self {
        ConvergenceMonitor {
            window,
            threshold,
            history: Vec::new(),
        }
    }

    /// Records one epoch; true when the mean over the last window differs from
    /// the mean over the window before by less than the threshold (relative to
    /// the earlier mean). A rising error does not count as settled.
    pub fn push(&mut self, value: f64) -> bool {
        self.history.push(value);
        let (w, len) = (self.window, self.history.len());
        if len < 2 * w {
            return false;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let previous = mean(&self.history[len - 2 * w..len - w]);
        let current = mean(&self.history[len - w..]);
        (previous - current).abs() < self.threshold * previous
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: AdamState,
    pub record: Vec<EpochRow>,
    pub stop: StopReason,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainOutcome {
    pub fn epochs(&self) -> usize {
        self.record.len()
    }

    pub fn final_rel_l2(&self) -> Option<f64> {
        self.record.last().map(|r| r.rel_l2)
    }
}

/// Trains a freshly initialized model.
pub fn train(ds: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let model = Model::new(&config.model, config.seed)?;
    let optimizer = AdamState::new(model.num_params(), config.adam);
    run(ds, config, model, optimizer, Vec::new())
}

/// Continues a run from a checkpoint holding optimizer state.
pub fn resume(ds: &Dataset, config: &TrainConfig, ckpt: Checkpoint) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let optimizer = ckpt
        .optimizer
        .ok_or_else(|| TrainError::Checkpoint("no optimizer state; the checkpoint supports inference only".into()))?;
    if ckpt.model.config != config.model {
        return Err(TrainError::Checkpoint(
            "checkpoint model configuration differs from the training configuration".into(),
        ));
    }
    if ckpt.seed != config.seed || ckpt.record.len() != ckpt.epoch {
        return Err(TrainError::Checkpoint(format!(
            "checkpoint (seed {}, {} epochs, {} record rows) does not continue this run (seed {})",
            ckpt.seed,
            ckpt.epoch,
            ckpt.record.len(),
            config.seed
        )));
    }
    run(ds, config, ckpt.model, optimizer, ckpt.record)
}

/// Training indices after applying the optional nested subset.
fn training_indices(ds: &Dataset, config: &TrainConfig) -> Result<Vec<usize>, TrainError> {
    let train = &ds.split.train;
    if train.is_empty() {
        return Err(TrainError::Config("dataset has no training designs".into()));
    }
    match config.train_subset {
        None => Ok(train.clone()),
        Some(n) => Ok(ds.nested_train_subset(n, ds.split.seed)?.split.train),
    }
}

fn run(
    ds: &Dataset,
    config: &TrainConfig,
    mut model: Model,
    mut optimizer: AdamState,
    mut record: Vec<EpochRow>,
) -> Result<TrainOutcome, TrainError> {
    let indices = training_indices(ds, config)?;
    let window = config.window();
    let mut monitor = ConvergenceMonitor::new(window, config.stop_threshold);
    let mut stop = StopReason::MaxEpochs;
    for row in &record {
        // Replay the stopping rule so a resumed run stops where the original would.
        if monitor.push(row.rel_l2) && row.epoch + 1 >= config.min_epochs {
            stop = StopReason::Converged;
        }
    }
    let out_dir = config.output_dir.as_deref();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(FormatError::Io)?;
    }
    let mut last_checkpoint: Option<PathBuf> = None;
    let started = Instant::now();
    let mut grad = vec![0.0; model.num_params()];
    let layout = model.layout().clone();

    let mut epoch = record.len();
    while stop != StopReason::Converged && epoch < config.max_epochs {
        let lr = config.schedule.lr_at(epoch)?;
        let (mut loss_sum, mut rel_sum, mut count) = (0.0, 0.0, 0usize);
        for (b, batch_idx) in batches(&indices, config.batch_size, config.seed, epoch as u64)
            .iter()
            .enumerate()
        {
            let stats = batch_gradient(&model, ds, batch_idx, config, epoch, b, &mut grad);
            let stats = stats.map_err(|e| with_checkpoint(e, &last_checkpoint))?;
            loss_sum += stats.0 * batch_idx.len() as f64;
            rel_sum += stats.1 * batch_idx.len() as f64;
            count += batch_idx.len();
            adam_step(&mut model.params, &grad, &mut optimizer, lr, Some(&layout))
                .map_err(|e| with_checkpoint(e, &last_checkpoint))?;
        }
        let row = EpochRow {
            epoch,
            loss: loss_sum / count as f64,
            rel_l2: rel_sum / count as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        if !(row.loss.is_finite() && row.rel_l2.is_finite()) {
            return Err(TrainError::NonFinite {
                what: format!("training loss at epoch {epoch}"),
                last_checkpoint,
            });
        }
        record.push(row);
        epoch += 1;
        if monitor.push(row.rel_l2) && epoch >= config.min_epochs {
            stop = StopReason::Converged;
        }
        if config.log_every > 0 && epoch % config.log_every == 0 {
            log::info!(
                "epoch {epoch}: loss {:.4e}, rel l2 {:.4e}, lr {:.3e}",
                row.loss,
                row.rel_l2,
                row.lr
            );
        }
        if let Some(dir) = out_dir {
            if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
                let path = dir.join("latest.ckpt");
                write_checkpoint(&path, dir, &model, &optimizer, config.seed, &record)?;
                last_checkpoint = Some(path);
            }
        }
    }

    let final_checkpoint = match out_dir {
        Some(dir) => {
            let path = dir.join("final.ckpt");
            write_checkpoint(&path, dir, &model, &optimizer, config.seed, &record)?;
            Some(path)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        optimizer,
        record,
        stop,
        final_checkpoint,
    })
}

fn with_checkpoint(err: TrainError, last: &Option<PathBuf>) -> TrainError {
    match err {
        TrainError::NonFinite { what, .. } => TrainError::NonFinite {
            what,
            last_checkpoint: last.clone(),
        },
        TrainError::Model(ModelError::NonFinite { block }) => TrainError::NonFinite {
            what: block,
            last_checkpoint: last.clone(),
        },
        other => other,
    }
}

fn write_checkpoint(
    path: &Path,
    dir: &Path,
    model: &Model,
    optimizer: &AdamState,
    seed: u64,
    record: &[EpochRow],
) -> Result<(), TrainError> {
    let ckpt = Checkpoint {
        model: model.clone(),
        optimizer: Some(optimizer.clone()),
        epoch: record.len(),
        seed,
        record: record.to_vec(),
    };
    save_checkpoint(&ckpt, path)?;
    let mut csv = Vec::new();
    write_record_csv(record, &mut csv).map_err(FormatError::Io)?;
    crate::format::atomic_write(&dir.join("train_record.csv"), &csv)?;
    Ok(())
}

/// Mean loss and relative error of one batch; its gradient is written to `grad`.
///
/// The batch is split into fixed chunks evaluated in parallel; each chunk
/// draws dropout masks from its own stream and the chunk gradients are
/// summed in order.
fn batch_gradient(
    model: &Model,
    ds: &Dataset,
    batch_idx: &[usize],
    config: &TrainConfig,
    epoch: usize,
    batch_number: usize,
    grad: &mut [f64],
) -> Result<(f64, f64), TrainError> {
    let total = batch_idx.len() as f64;
    let chunks: Vec<&[usize]> = batch_idx.chunks(config.grad_chunk).collect();
    let dropout_stream = |c: usize| ((epoch as u64) << 32) | ((batch_number as u64) << 12) | c as u64;
    let eval = |(c, idx): (usize, &&[usize])| -> Result<(f64, f64, Vec<f64>), TrainError> {
        let batch = Batch::gather(ds, idx);
        let mut g = vec![0.0; model.num_params()];
        let mut rng = stream(config.seed, Domain::Dropout, dropout_stream(c));
        let stats = model.loss_and_grad(&batch, Some(&mut rng), Some(&mut g))?;
        Ok((stats.loss, stats.relative_l2, g))
    };
    let results: Vec<_> = if chunks.len() == 1 {
        chunks.iter().enumerate().map(eval).collect()
    } else {
        chunks.par_iter().enumerate().map(eval).collect()
    };
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (mut loss, mut rel) = (0.0, 0.0);
    for (result, idx) in results.into_iter().zip(&chunks) {
        let (l, r, g) = result?;
        let w = idx.len() as f64 / total;
        loss += w * l;
        rel += w * r;
        if chunks.len() == 1 {
            grad.copy_from_slice(&g);
        } else {
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += w * b);
        }
    }
    Ok((loss, rel))
}
